#include "orefeed/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "orefeed/parallel.hpp"

namespace orefeed::eval {

ClassReport classification_report(std::span<const ClassId> preds, std::span<const ClassId> labels,
                                  const ingest::ClassVocab& vocab) {
  if (preds.size() != labels.size()) throw PreconditionError("classification_report: length mismatch");
  if (preds.empty()) throw PreconditionError("classification_report: empty input");
  std::map<std::pair<ClassId, ClassId>, std::size_t> confusion;  // (true, pred)
  std::set<ClassId> seen;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!vocab.contains(labels[i]) || !vocab.contains(preds[i])) {
      throw PreconditionError("classification_report: class outside vocabulary");
    }
    ++confusion[{labels[i], preds[i]}];
    seen.insert(labels[i]);
    seen.insert(preds[i]);
  }
  ClassReport rep;
  rep.total = preds.size();
  std::size_t correct = 0;
  for (const ClassId c : seen) {
    std::size_t tp = 0, support = 0, predicted = 0;
    std::optional<std::pair<ClassId, std::size_t>> worst;
    for (const auto& [key, n] : confusion) {
      if (key.first == c) support += n;
      if (key.second == c) predicted += n;
      if (key.first == c && key.second == c) tp = n;
      if (key.first == c && key.second != c && (!worst || n > worst->second)) {
        worst = std::pair{key.second, n};
      }
    }
    correct += tp;
    ClassStats s;
    s.cls = c;
    s.support = support;
    s.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    s.recall = support ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
    s.f1 = s.precision + s.recall > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    if (worst) {
      s.most_misclassified = std::pair{worst->first, static_cast<double>(worst->second) /
                                                         static_cast<double>(support)};
    }
    rep.classes.push_back(s);
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.total);
  return rep;
}

std::string format_row(double precision, double recall, double f1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << precision << " / " << recall << " / " << f1;
  return os.str();
}

std::string render_table(const ClassReport& report, const ingest::ClassVocab& vocab) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "class" << std::setw(22) << "P / R / F1" << std::setw(9)
     << "support" << "most misclassified\n";
  for (const auto& s : report.classes) {
    os << std::setw(8) << vocab.name(s.cls) << std::setw(22) << format_row(s.precision, s.recall, s.f1)
       << std::setw(9) << s.support;
    if (s.most_misclassified) {
      std::ostringstream share;
      share << std::fixed << std::setprecision(2) << s.most_misclassified->second * 100.0;
      os << vocab.name(s.most_misclassified->first) << " (" << share.str() << "%)";
    } else if (s.support == 0) {
      os << "(no support)";
    }
    os << '\n';
  }
  std::ostringstream acc;
  acc << std::fixed << std::setprecision(4) << report.accuracy;
  os << "accuracy " << acc.str() << " over " << report.total << '\n';
  return os.str();
}

nlohmann::json to_json(const ClassReport& report, const ingest::ClassVocab& vocab) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& s : report.classes) {
    nlohmann::json row = {{"class", vocab.name(s.cls)},
                          {"precision", s.precision},
                          {"recall", s.recall},
                          {"f1", s.f1},
                          {"support", s.support},
                          {"row", format_row(s.precision, s.recall, s.f1)}};
    if (s.most_misclassified) {
      row["most_misclassified"] = {{"class", vocab.name(s.most_misclassified->first)},
                                   {"fraction", s.most_misclassified->second}};
    }
    if (s.support == 0) row["unsupported"] = true;
    classes.push_back(row);
  }
  return {{"accuracy", report.accuracy}, {"total", report.total}, {"classes", classes}};
}

std::string to_string(MpOutcome o) {
  switch (o) {
    case MpOutcome::Correct: return "MP_c";
    case MpOutcome::CorrectPlus: return "MP_c+";
    case MpOutcome::CorrectMinus: return "MP_c-";
    case MpOutcome::Wrong: return "MP_w";
  }
  return "MP_w";
}

MpOutcome mp_classify(double quality, double q_m, double s_actual, double s_pred) {
  if (quality >= q_m) {
    if (s_pred == s_actual) return MpOutcome::Correct;
    return s_pred > s_actual ? MpOutcome::CorrectPlus : MpOutcome::Wrong;
  }
  return s_pred < s_actual ? MpOutcome::CorrectMinus : MpOutcome::Wrong;
}

std::size_t count_changes(std::span<const double> setpoints) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < setpoints.size(); ++i) n += setpoints[i] != setpoints[i - 1] ? 1 : 0;
  return n;
}

DeployEvalReport deploy_eval(std::span<const DeployRecord> records,
                             std::span<const double> pred_sequence,
                             std::span<const double> actual_sequence, double q_m) {
  if (records.empty()) throw PreconditionError("deploy_eval: no records");
  DeployEvalReport rep;
  rep.n_labs = records.size();
  rep.outcomes.reserve(records.size());
  for (const auto& r : records) {
    const MpOutcome o = mp_classify(r.quality, q_m, r.s_actual, r.s_pred);
    rep.outcomes.push_back(o);
    ++rep.counts[static_cast<std::size_t>(o)];
    if (r.quality >= q_m) {
      ++rep.n_qualified;
      rep.throughput_human += r.s_actual;
    }
    if (o != MpOutcome::Wrong) rep.throughput_model += r.s_pred;
  }
  for (std::size_t i = 0; i < kMpOutcomes; ++i) {
    rep.fractions[i] = static_cast<double>(rep.counts[i]) / static_cast<double>(rep.n_labs);
  }
  rep.human_changes = count_changes(actual_sequence);
  rep.model_changes = count_changes(pred_sequence);
  rep.boost_percent = rep.throughput_human > 0.0
                          ? 100.0 * (rep.throughput_model - rep.throughput_human) / rep.throughput_human
                          : 0.0;
  return rep;
}

nlohmann::json to_json(const DeployEvalReport& report) {
  nlohmann::json counts, fractions;
  for (std::size_t i = 0; i < kMpOutcomes; ++i) {
    const auto name = to_string(static_cast<MpOutcome>(i));
    counts[name] = report.counts[i];
    fractions[name] = report.fractions[i];
  }
  return {{"counts", counts},
          {"fractions", fractions},
          {"n_labs", report.n_labs},
          {"n_qualified", report.n_qualified},
          {"human_changes", report.human_changes},
          {"model_changes", report.model_changes},
          {"throughput_human", report.throughput_human},
          {"throughput_model", report.throughput_model},
          {"boost_percent", report.boost_percent},
          {"throughput_rule",
           "human: s_actual over labs with Q >= q_m; model: s_pred over MP_c, MP_c+ and MP_c- records"}};
}

void write_deploy_csv(std::span<const DeployRecord> records, const DeployEvalReport& report,
                      const std::filesystem::path& path) {
  if (records.size() != report.outcomes.size()) {
    throw PreconditionError("write_deploy_csv: report does not match records");
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "lab_t,Q,s_actual,s_pred,outcome\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << format_timestamp(r.lab_t) << ',' << r.quality << ',' << r.s_actual << ',' << r.s_pred
        << ',' << to_string(report.outcomes[i]) << '\n';
  }
}

HistogramExport export_feature_distributions(const patchnet::PatchNet& tau, const PatchStore& store,
                                             std::span<const std::size_t> image_ids,
                                             std::span<const int> targets,
                                             std::span<const std::string> head_names,
                                             const std::filesystem::path& out_path, int bins) {
  if (image_ids.empty()) throw PreconditionError("export_feature_distributions: no samples");
  require(image_ids.size() == targets.size(), "export_feature_distributions: one target per sample");
  const int heads = tau.config().num_classes;
  const int d = tau.config().per_class_channels;
  require(static_cast<int>(head_names.size()) == heads, "export_feature_distributions: one name per head");
  require(bins >= 1, "export_feature_distributions: bins must be >= 1");

  const auto n = image_ids.size();
  std::vector<Eigen::VectorXd> pooled(n);
  std::vector<Eigen::VectorXd> probs(n);
  parallel_for(n, [&](std::size_t i) {
    const auto out = tau.forward(store.segments(image_ids[i]));
    pooled[i] = out.gfm2.rowwise().mean();
    probs[i] = out.probs;
  });

  struct Pick {
    int head;
    const char* kind;
    std::size_t sample;
  };
  std::vector<Pick> picks;
  HistogramExport res;
  for (int c = 0; c < heads; ++c) {
    std::optional<std::size_t> best, worst;
    for (std::size_t i = 0; i < n; ++i) {
      if (targets[i] != c) continue;
      Eigen::Index arg = 0;
      probs[i].maxCoeff(&arg);
      if (arg != c) continue;
      if (!best || probs[i][c] > probs[*best][c]) best = i;
      if (!worst || probs[i][c] < probs[*worst][c]) worst = i;
    }
    if (!best) {
      res.omitted_heads.push_back(c);
      continue;
    }
    res.emitted_heads.push_back(c);
    picks.push_back({c, "best", *best});
    picks.push_back({c, "worst", *worst});
  }

  double hi = 0.0;
  for (const auto& p : picks) hi = std::max(hi, pooled[p.sample].maxCoeff());
  if (!(hi > 0.0)) hi = 1.0;
  const double width = hi / bins;

  std::ofstream out(out_path);
  if (!out) throw Error("cannot write " + out_path.string());
  out << "class,kind,head,bin,bin_lo,bin_hi,count\n";
  for (const auto& p : picks) {
    for (int h = 0; h < heads; ++h) {
      std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
      for (int j = 0; j < d; ++j) {
        const double v = pooled[p.sample][h * d + j];
        const int b = std::clamp(static_cast<int>(v / width), 0, bins - 1);
        ++counts[static_cast<std::size_t>(b)];
      }
      for (int b = 0; b < bins; ++b) {
        out << head_names[static_cast<std::size_t>(p.head)] << ',' << p.kind << ','
            << head_names[static_cast<std::size_t>(h)] << ',' << b << ',' << b * width << ','
            << (b + 1) * width << ',' << counts[static_cast<std::size_t>(b)] << '\n';
      }
    }
  }
  for (const int c : res.omitted_heads) {
    out << "# " << head_names[static_cast<std::size_t>(c)] << ": no true positives, omitted\n";
  }
  return res;
}

}  // namespace orefeed::eval

#include "orefeed/weak_relabel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "orefeed/common.hpp"
#include "orefeed/parallel.hpp"
#include "orefeed/random.hpp"

namespace orefeed::relabel {

Eigen::VectorXd PcaModel::transform(const Eigen::VectorXd& x) const {
  if (x.size() != mean.size()) throw ShapeError("pca: input dimension mismatch");
  return components * (x - mean);
}

Eigen::MatrixXd PcaModel::transform(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != mean.size()) throw ShapeError("pca: input dimension mismatch");
  return (rows.rowwise() - mean.transpose()) * components.transpose();
}

Eigen::VectorXd PcaModel::inverse_transform(const Eigen::VectorXd& z) const {
  if (z.size() != components.rows()) throw ShapeError("pca: component count mismatch");
  return components.transpose() * z + mean;
}

PcaModel fit_pca(const Eigen::MatrixXd& features, double variance_target) {
  require(features.rows() >= 2, "fit_pca: need at least two samples");
  require(features.allFinite(), "fit_pca: features must be finite");
  require(variance_target > 0.0 && variance_target <= 1.0, "fit_pca: variance target must lie in (0, 1]");
  const Eigen::Index dim = features.cols();
  PcaModel model;
  model.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("fit_pca: eigendecomposition failed");
  // Ascending from the solver; flip to descending and clip round-off negatives.
  const Eigen::VectorXd values = eig.eigenvalues().reverse().cwiseMax(0.0);
  const Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  const double total = values.sum();

  if (!(total > 0.0)) {
    model.degenerate = true;
    model.components = Eigen::MatrixXd::Zero(1, dim);
    model.components(0, 0) = 1.0;
    model.explained_variance_ratio = Eigen::VectorXd::Ones(1);
    return model;
  }

  const Eigen::VectorXd ratio = values / total;
  Eigen::Index keep = 0;
  double cumulative = 0.0;
  while (keep < dim) {
    cumulative += ratio[keep++];
    if (cumulative >= variance_target - 1e-12) break;
  }
  model.components = vectors.leftCols(keep).transpose();
  model.explained_variance_ratio = ratio.head(keep);
  // Deterministic sign: the largest-magnitude entry of each component is positive.
  for (Eigen::Index r = 0; r < keep; ++r) {
    Eigen::Index arg = 0;
    model.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
  }
  return model;
}

namespace {

// Nearest centroid (lowest index on ties) and its squared distance.
std::pair<int, double> nearest(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

double assign(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
              std::vector<int>& assignments, std::vector<double>& dist) {
  const auto n = static_cast<std::size_t>(points.rows());
  parallel_for(n, [&](std::size_t i) {
    const auto [c, d] = nearest(centroids, points.row(static_cast<Eigen::Index>(i)));
    assignments[i] = c;
    dist[i] = d;
  });
  double total = 0.0;
  for (const double d : dist) total += d;
  return total;
}

}  // namespace

double inertia_of(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
                  std::span<const int> assignments) {
  require(static_cast<Eigen::Index>(assignments.size()) == points.rows(),
          "inertia_of: one assignment per point required");
  double total = 0.0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    total += (points.row(static_cast<Eigen::Index>(i)) - centroids.row(assignments[i])).squaredNorm();
  }
  return total;
}

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter,
                    double tol) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw PreconditionError("kmeans: k must be >= 1");
  if (k > n) {
    throw PreconditionError("kmeans: k=" + std::to_string(k) + " exceeds the " +
                            std::to_string(n) + " points");
  }
  require(max_iter >= 1, "kmeans: max_iter must be >= 1");
  Rng rng(seed);
  const auto un = static_cast<std::size_t>(n);

  // k-means++ seeding.
  Eigen::MatrixXd centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.below(un)));
  std::vector<double> d2(un);
  for (std::size_t i = 0; i < un; ++i) {
    d2[i] = (points.row(static_cast<Eigen::Index>(i)) - centroids.row(0)).squaredNorm();
  }
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double run = 0.0;
      pick = un - 1;
      for (std::size_t i = 0; i < un; ++i) {
        run += d2[i];
        if (run > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(un));
    }
    centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < un; ++i) {
      d2[i] = std::min(d2[i], (points.row(static_cast<Eigen::Index>(i)) - centroids.row(c)).squaredNorm());
    }
  }

  KMeansResult res;
  res.k = k;
  res.assignments.assign(un, 0);
  std::vector<double> dist(un, 0.0);
  res.inertia_history.push_back(assign(points, centroids, res.assignments, dist));

  for (int it = 1; it <= max_iter; ++it) {
    res.iterations = it;
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < un; ++i) {
      next.row(res.assignments[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(res.assignments[i])];
    }
    std::vector<char> taken(un, 0);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its current centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < un; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      taken[far] = 1;
      next.row(c) = points.row(static_cast<Eigen::Index>(far));
    }
    const double shift = (next - centroids).rowwise().squaredNorm().maxCoeff();
    centroids = std::move(next);
    res.inertia_history.push_back(assign(points, centroids, res.assignments, dist));
    if (shift < tol) break;
  }
  res.centroids = std::move(centroids);
  res.inertia = res.inertia_history.back();
  return res;
}

ElbowChoice elbow_select(const ElbowCurve& curve) {
  if (curve.ks.size() != curve.inertias.size()) {
    throw PreconditionError("elbow_select: ks and inertias differ in length");
  }
  if (curve.ks.size() < 3) throw PreconditionError("elbow_select: need at least 3 points");
  for (std::size_t i = 1; i < curve.ks.size(); ++i) {
    if (curve.ks[i] <= curve.ks[i - 1]) throw PreconditionError("elbow_select: ks must increase");
  }
  const auto [lo_it, hi_it] = std::minmax_element(curve.inertias.begin(), curve.inertias.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  ElbowChoice choice;
  choice.k = curve.ks.front();
  if (!(span > 0.0)) {
    choice.no_knee = true;
    return choice;
  }
  const double k0 = curve.ks.front(), kspan = curve.ks.back() - k0;
  auto x = [&](std::size_t i) { return (curve.ks[i] - k0) / kspan; };
  auto y = [&](std::size_t i) { return (curve.inertias[i] - lo) / span; };
  const std::size_t last = curve.ks.size() - 1;
  const double cx = x(last) - x(0), cy = y(last) - y(0);
  const double chord = std::hypot(cx, cy);
  for (std::size_t i = 1; i < last; ++i) {
    const double d = std::abs(cx * (y(i) - y(0)) - cy * (x(i) - x(0))) / chord;
    if (d > choice.distance) {
      choice.distance = d;
      choice.k = curve.ks[i];
    }
  }
  if (choice.distance < 0.01) {
    choice.no_knee = true;
    choice.k = curve.ks.front();
  }
  return choice;
}

RelabelMode relabel_mode_from_string(const std::string& s) {
  if (s == "cluster_id") return RelabelMode::ClusterId;
  if (s == "cluster_mode") return RelabelMode::ClusterMode;
  throw ConfigError("unknown relabel mode '" + s + "' (expected cluster_id or cluster_mode)");
}

std::string to_string(RelabelMode mode) {
  return mode == RelabelMode::ClusterId ? "cluster_id" : "cluster_mode";
}

double change_fraction(std::span<const ClassId> before, std::span<const ClassId> after) {
  require(before.size() == after.size(), "change_fraction: length mismatch");
  if (before.empty()) return 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < before.size(); ++i) n += before[i] != after[i] ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(before.size());
}

RelabelResult relabel(std::span<const int> assignments, std::span<const ClassId> current_labels,
                      ingest::ClassVocab& vocab, RelabelMode mode, double purity_threshold) {
  if (assignments.size() != current_labels.size()) {
    throw PreconditionError("relabel: assignments and labels differ in length");
  }
  // Per-cluster label histogram; std::map keeps label order for tie-breaking.
  std::map<int, std::map<ClassId, std::size_t>> hist;
  std::map<int, std::size_t> size;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    ++hist[assignments[i]][current_labels[i]];
    ++size[assignments[i]];
  }
  std::map<int, ClassId> modal;
  std::map<int, double> share;
  for (const auto& [cluster, counts] : hist) {
    ClassId best = counts.begin()->first;
    std::size_t best_n = 0;
    for (const auto& [label, n] : counts) {
      if (n > best_n) {
        best_n = n;
        best = label;
      }
    }
    modal[cluster] = best;
    share[cluster] = static_cast<double>(best_n) / static_cast<double>(size[cluster]);
  }

  RelabelResult out;
  std::map<int, ClassId> target;
  for (const auto& [cluster, m] : modal) {
    if (mode == RelabelMode::ClusterId || share[cluster] < purity_threshold) {
      target[cluster] = vocab.mint();
      out.minted.push_back(target[cluster]);
    } else {
      target[cluster] = m;
    }
  }
  out.labels.resize(assignments.size());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    out.labels[i] = target[assignments[i]];
    const ClassId compare = mode == RelabelMode::ClusterId ? modal[assignments[i]] : out.labels[i];
    changed += compare != current_labels[i] ? 1 : 0;
  }
  out.change_fraction =
      assignments.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(assignments.size());
  return out;
}

void StageOneConfig::validate() const {
  if (k_min < 1 || k_max < k_min + 2) throw ConfigError("relabel k range needs k_max >= k_min + 2 >= 3");
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (!(purity_threshold >= 0.0 && purity_threshold <= 1.0)) {
    throw ConfigError("purity_threshold must lie in [0, 1]");
  }
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw ConfigError("variance_target must lie in (0, 1]");
  }
  train.validate();
}

nlohmann::json to_json(const StageOneReport& report, const ingest::ClassVocab& vocab) {
  nlohmann::json iters = nlohmann::json::array();
  for (const auto& it : report.iterations) {
    nlohmann::json minted = nlohmann::json::array();
    for (const ClassId c : it.minted_classes) minted.push_back(vocab.name(c));
    iters.push_back({{"iteration", it.iteration},
                     {"val_accuracy", it.val_accuracy},
                     {"epochs", it.epochs},
                     {"pca_components", it.pca_components},
                     {"selected_k", it.selected_k},
                     {"no_knee", it.no_knee},
                     {"label_change_fraction", it.change_fraction},
                     {"minted_classes", minted},
                     {"relabel_source", it.relabel_source},
                     {"reinitialized", it.reinitialized}});
  }
  return {{"iterations", iters}, {"converged", report.converged}, {"final_refit", report.final_refit}};
}

void write_audit_jsonl(std::span<const AuditEntry> audit, const ingest::ClassVocab& vocab,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& a : audit) {
    out << nlohmann::json{{"iteration", a.iteration},
                          {"instance_id", a.instance_id},
                          {"old_label", vocab.name(a.old_label)},
                          {"new_label", vocab.name(a.new_label)},
                          {"cluster", a.cluster}}
               .dump()
        << '\n';
  }
}

namespace {

int argmax_lowest(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

class PatchTrainable final : public optim::Trainable {
 public:
  PatchTrainable(patchnet::PatchNet& net, const PatchStore& store,
                 std::span<const std::size_t> image_ids, std::vector<int> targets)
      : net_(net), store_(store), ids_(image_ids), targets_(std::move(targets)) {}

  ParamSet& params() override { return net_.params(); }
  double loss_grad(std::size_t example, std::optional<std::uint64_t> aug_seed,
                   ParamSet& grad) const override {
    return net_.loss_grad(store_.segments(ids_[example], aug_seed), targets_[example], grad);
  }
  int predict(std::size_t example) const override {
    return argmax_lowest(net_.forward(store_.segments(ids_[example])).logits);
  }
  int label(std::size_t example) const override { return targets_[example]; }

 private:
  patchnet::PatchNet& net_;
  const PatchStore& store_;
  std::span<const std::size_t> ids_;
  std::vector<int> targets_;
};

std::vector<ClassId> sorted_unique(std::vector<ClassId> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

Eigen::MatrixXd extract_all(const patchnet::PatchNet& tau, const PatchStore& store,
                            std::span<const std::size_t> image_ids) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(image_ids.size()), tau.config().fused_channels());
  parallel_for(image_ids.size(), [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) =
        tau.extract_features(store.segments(image_ids[i])).transpose();
  });
  return out;
}

StageOneResult stage_one(const PatchStore& store, std::span<const ingest::Bag> train_bags,
                         std::span<const ingest::Bag> val_bags, ingest::ClassVocab& vocab,
                         const StageOneConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  require(!train_bags.empty() && !val_bags.empty(), "stage_one: need training and validation bags");
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  std::vector<std::size_t> ids;
  std::vector<ClassId> labels;
  for (const auto& b : train_bags)
    for (const auto id : b.instance_ids) ids.push_back(id), labels.push_back(b.label);
  const std::size_t n_train = ids.size();
  for (const auto& b : val_bags)
    for (const auto id : b.instance_ids) ids.push_back(id), labels.push_back(b.label);
  require(n_train > 0 && ids.size() > n_train, "stage_one: bags carry no instances");
  const auto n = ids.size();

  std::vector<std::size_t> train_idx(n_train), val_idx(n - n_train);
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  std::iota(val_idx.begin(), val_idx.end(), n_train);

  std::vector<ClassId> heads = sorted_unique(labels);
  auto make_net = [&](int salt) {
    patchnet::PatchNetConfig net_cfg = cfg.net;
    net_cfg.num_classes = static_cast<int>(heads.size());
    return patchnet::PatchNet(net_cfg, derive_seed(cfg.seed, 0x7a0ULL, static_cast<std::uint64_t>(salt)));
  };
  auto targets_for = [&](const std::vector<ClassId>& labs) {
    std::vector<int> t(labs.size());
    for (std::size_t i = 0; i < labs.size(); ++i) {
      t[i] = static_cast<int>(std::lower_bound(heads.begin(), heads.end(), labs[i]) - heads.begin());
    }
    return t;
  };
  auto fit = [&](patchnet::PatchNet& net, int iteration) {
    PatchTrainable model(net, store, ids, targets_for(labels));
    optim::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 0x7a1ULL, static_cast<std::uint64_t>(iteration));
    return optim::train(model, train_idx, val_idx, tc, [&](const optim::EpochRecord& r) {
      say("stage1 iteration " + std::to_string(iteration) + " epoch " + std::to_string(r.epoch) +
          " loss " + std::to_string(r.train_loss) + " val_acc " + std::to_string(r.val_accuracy));
    });
  };

  StageOneResult result{make_net(0), heads, ids, labels, labels, {}, {}, {}};
  bool reinit = false;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    IterationReport rep;
    rep.iteration = it;
    if (reinit) {
      result.tau = make_net(it);
      rep.reinitialized = true;
      reinit = false;
    }
    const auto hist = fit(result.tau, it);
    result.histories.push_back(hist);
    rep.val_accuracy = hist.best_val_accuracy;
    rep.epochs = static_cast<int>(hist.epochs.size());

    const Eigen::MatrixXd feats = extract_all(result.tau, store, ids);
    const PcaModel pca = fit_pca(feats, cfg.variance_target);
    const Eigen::MatrixXd z = pca.transform(feats);
    rep.pca_components = static_cast<int>(pca.n_components());
    ElbowCurve curve;
    std::vector<KMeansResult> fits;
    const int k_hi = std::min<int>(cfg.k_max, static_cast<int>(n));
    for (int k = cfg.k_min; k <= k_hi; ++k) {
      fits.push_back(kmeans(z, k, derive_seed(cfg.seed, static_cast<std::uint64_t>(it),
                                              static_cast<std::uint64_t>(k))));
      curve.ks.push_back(k);
      curve.inertias.push_back(fits.back().inertia);
    }
    const ElbowChoice choice = elbow_select(curve);
    rep.selected_k = choice.k;
    rep.no_knee = choice.no_knee;
    const KMeansResult& km = fits[static_cast<std::size_t>(choice.k - cfg.k_min)];

    std::vector<ClassId> next;
    if (it == 1) {
      RelabelResult rr = relabel(km.assignments, labels, vocab, cfg.mode, cfg.purity_threshold);
      next = std::move(rr.labels);
      rep.change_fraction = rr.change_fraction;
      rep.minted_classes = std::move(rr.minted);
      rep.relabel_source = "clusters";
    } else {
      next.resize(n);
      parallel_for(n, [&](std::size_t i) {
        next[i] = heads[static_cast<std::size_t>(
            argmax_lowest(result.tau.forward(store.segments(ids[i])).logits))];
      });
      rep.change_fraction = change_fraction(labels, next);
      rep.relabel_source = "predictions";
    }
    for (std::size_t i = 0; i < n; ++i) {
      result.audit.push_back({it, ids[i], labels[i], next[i], km.assignments[i]});
    }
    labels = std::move(next);
    const auto now = sorted_unique(labels);
    if (!std::includes(heads.begin(), heads.end(), now.begin(), now.end())) {
      heads = now;
      reinit = true;
    }
    say("stage1 iteration " + std::to_string(it) + " k=" + std::to_string(rep.selected_k) +
        " change=" + std::to_string(rep.change_fraction));
    result.report.iterations.push_back(std::move(rep));
    if (result.report.iterations.back().change_fraction < cfg.epsilon) {
      result.report.converged = true;
      break;
    }
  }
  if (reinit) {
    // The last relabel introduced classes the current model has no heads for.
    result.tau = make_net(cfg.max_iterations + 1);
    result.histories.push_back(fit(result.tau, cfg.max_iterations + 1));
    result.report.final_refit = true;
  }
  result.head_classes = heads;
  result.labels = labels;
  return result;
}

FeatureCache::FeatureCache(const patchnet::PatchNet& tau, const PatchStore& store,
                           std::span<const std::size_t> image_ids)
    : channels_(tau.config().fused_channels()) {
  std::vector<ops::FeatureMap> maps(image_ids.size());
  parallel_for(image_ids.size(), [&](std::size_t i) {
    maps[i] = tau.forward(store.segments(image_ids[i])).gfm2;
  });
  for (std::size_t i = 0; i < image_ids.size(); ++i) maps_[image_ids[i]] = std::move(maps[i]);
}

const ops::FeatureMap& FeatureCache::at(std::size_t image_id) const {
  const auto it = maps_.find(image_id);
  if (it == maps_.end()) throw PreconditionError("no cached features for image " + std::to_string(image_id));
  return it->second;
}

namespace {

std::vector<ops::FeatureMap> bag_maps(const FeatureCache& cache, const ingest::Bag& bag) {
  std::vector<ops::FeatureMap> maps;
  maps.reserve(bag.instance_ids.size());
  for (const auto id : bag.instance_ids) maps.push_back(cache.at(id));
  return maps;
}

class BagTrainable final : public optim::Trainable {
 public:
  BagTrainable(bagnet::BagNet& net, const FeatureCache& cache, std::vector<ingest::Bag> bags,
               std::vector<int> targets)
      : net_(net), cache_(cache), bags_(std::move(bags)), targets_(std::move(targets)) {}

  ParamSet& params() override { return net_.params(); }
  double loss_grad(std::size_t example, std::optional<std::uint64_t>, ParamSet& grad) const override {
    return net_.loss_grad(bag_maps(cache_, bags_[example]), targets_[example], grad);
  }
  int predict(std::size_t example) const override {
    return net_.predict(bag_maps(cache_, bags_[example])).class_index;
  }
  int label(std::size_t example) const override { return targets_[example]; }

 private:
  bagnet::BagNet& net_;
  const FeatureCache& cache_;
  std::vector<ingest::Bag> bags_;
  std::vector<int> targets_;
};

}  // namespace

StageTwoResult stage_two(const FeatureCache& cache, std::span<const ingest::Bag> train_bags,
                         std::span<const ingest::Bag> val_bags, const ingest::ClassVocab& vocab,
                         const StageTwoConfig& cfg) {
  require(!train_bags.empty(), "stage_two: empty training bag set");
  require(!val_bags.empty(), "stage_two: empty validation bag set");
  bagnet::BagNetConfig net_cfg = cfg.net;
  net_cfg.input_channels = cache.channels();
  net_cfg.num_setpoint_classes = static_cast<int>(vocab.setpoint_count());

  std::vector<ingest::Bag> all(train_bags.begin(), train_bags.end());
  all.insert(all.end(), val_bags.begin(), val_bags.end());
  std::vector<int> targets;
  for (const auto& b : all) {
    require(!b.instance_ids.empty(), "stage_two: bag " + std::to_string(b.bag_id) + " is empty");
    require(vocab.is_setpoint(b.label), "stage_two: bag labels must be setpoint classes");
    targets.push_back(b.label);
  }
  std::vector<std::size_t> train_idx(train_bags.size()), val_idx(val_bags.size());
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  std::iota(val_idx.begin(), val_idx.end(), train_bags.size());

  StageTwoResult res{bagnet::BagNet(net_cfg, vocab.setpoints(), derive_seed(cfg.seed, 0x3e9ULL)), {}, 0.0, {}};
  BagTrainable model(res.omega, cache, all, targets);
  optim::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 0x3eaULL);
  tc.augment = false;
  res.history = optim::train(model, train_idx, val_idx, tc);
  res.val_accuracy = optim::accuracy(model, val_idx);
  res.val_predictions = predict_bags(res.omega, cache, val_bags);
  return res;
}

std::vector<double> predict_bags(const bagnet::BagNet& omega, const FeatureCache& cache,
                                 std::span<const ingest::Bag> bags) {
  std::vector<double> out(bags.size());
  parallel_for(bags.size(), [&](std::size_t i) {
    out[i] = omega.predict(bag_maps(cache, bags[i])).setpoint;
  });
  return out;
}

}  // namespace orefeed::relabel

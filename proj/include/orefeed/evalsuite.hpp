#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "orefeed/common.hpp"
#include "orefeed/ingest.hpp"
#include "orefeed/patch_net.hpp"
#include "orefeed/patch_store.hpp"

namespace orefeed::eval {

struct ClassStats {
  ClassId cls = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  // Wrong class taking the largest share of this class's instances.
  std::optional<std::pair<ClassId, double>> most_misclassified;
};

struct ClassReport {
  std::vector<ClassStats> classes;  // every vocab class that occurs as label or prediction
  double accuracy = 0.0;
  std::size_t total = 0;
};

ClassReport classification_report(std::span<const ClassId> preds, std::span<const ClassId> labels,
                                  const ingest::ClassVocab& vocab);
// "0.98 / 0.79 / 0.87"
std::string format_row(double precision, double recall, double f1);
std::string render_table(const ClassReport& report, const ingest::ClassVocab& vocab);
nlohmann::json to_json(const ClassReport& report, const ingest::ClassVocab& vocab);

enum class MpOutcome { Correct = 0, CorrectPlus = 1, CorrectMinus = 2, Wrong = 3 };
inline constexpr std::size_t kMpOutcomes = 4;

std::string to_string(MpOutcome o);  // "MP_c", "MP_c+", "MP_c-", "MP_w"
MpOutcome mp_classify(double quality, double q_m, double s_actual, double s_pred);

std::size_t count_changes(std::span<const double> setpoints);

struct DeployRecord {
  Minutes lab_t = 0;
  double quality = 0.0;
  double s_actual = 0.0;
  double s_pred = 0.0;
};

struct DeployEvalReport {
  std::array<std::size_t, kMpOutcomes> counts{};
  std::array<double, kMpOutcomes> fractions{};
  std::size_t n_labs = 0;
  std::size_t n_qualified = 0;
  std::size_t human_changes = 0;
  std::size_t model_changes = 0;
  double throughput_human = 0.0;
  double throughput_model = 0.0;
  double boost_percent = 0.0;
  std::vector<MpOutcome> outcomes;  // per record, input order
};

// Throughput crediting: the human side counts s_actual on qualified labs; the
// model side counts s_pred on MP_c, MP_c+ and MP_c- records.
DeployEvalReport deploy_eval(std::span<const DeployRecord> records,
                             std::span<const double> pred_sequence,
                             std::span<const double> actual_sequence, double q_m);
nlohmann::json to_json(const DeployEvalReport& report);
// lab_t,Q,s_actual,s_pred,outcome
void write_deploy_csv(std::span<const DeployRecord> records, const DeployEvalReport& report,
                      const std::filesystem::path& path);

struct HistogramExport {
  std::vector<int> emitted_heads;
  std::vector<int> omitted_heads;  // heads without a true-positive sample
};

// For each head class, the best and worst true-positive samples (by the head's
// probability) and a histogram of every head's pooled activations for them.
// CSV columns: class,kind,head,bin,bin_lo,bin_hi,count
HistogramExport export_feature_distributions(const patchnet::PatchNet& tau, const PatchStore& store,
                                             std::span<const std::size_t> image_ids,
                                             std::span<const int> targets,
                                             std::span<const std::string> head_names,
                                             const std::filesystem::path& out_path, int bins = 20);

}  // namespace orefeed::eval

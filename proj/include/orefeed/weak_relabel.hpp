#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "orefeed/bag_net.hpp"
#include "orefeed/ingest.hpp"
#include "orefeed/optimizer.hpp"
#include "orefeed/patch_net.hpp"
#include "orefeed/patch_store.hpp"

namespace orefeed::relabel {

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // n_components x dim, orthonormal rows
  Eigen::VectorXd explained_variance_ratio;
  bool degenerate = false;     // input had zero variance

  Eigen::Index n_components() const { return components.rows(); }
  Eigen::VectorXd transform(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd transform(const Eigen::MatrixXd& rows) const;  // one sample per row
  Eigen::VectorXd inverse_transform(const Eigen::VectorXd& z) const;
};

// Rows are samples. Keeps the fewest components whose cumulative ratio reaches the target.
PcaModel fit_pca(const Eigen::MatrixXd& features, double variance_target = 0.95);

struct KMeansResult {
  int k = 0;
  Eigen::MatrixXd centroids;  // k x dim
  std::vector<int> assignments;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment step
  int iterations = 0;
};

// k-means++ seeding then Lloyd iterations. Distance ties go to the lower centroid index.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter = 300,
                    double tol = 1e-6);
double inertia_of(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
                  std::span<const int> assignments);

struct ElbowCurve {
  std::vector<int> ks;
  std::vector<double> inertias;
};

struct ElbowChoice {
  int k = 0;
  bool no_knee = false;
  double distance = 0.0;  // normalized distance of the knee from the end-point chord
};

ElbowChoice elbow_select(const ElbowCurve& curve);

enum class RelabelMode { ClusterId, ClusterMode };

RelabelMode relabel_mode_from_string(const std::string& s);
std::string to_string(RelabelMode mode);

struct RelabelResult {
  std::vector<ClassId> labels;
  std::vector<ClassId> minted;
  double change_fraction = 0.0;
};

// ClusterId: every cluster becomes a newly minted class; a label counts as changed
// when its cluster's modal previous label differs from the instance's previous
// label. ClusterMode: members take their cluster's modal label, or a minted class
// when the modal share is below purity_threshold.
RelabelResult relabel(std::span<const int> assignments, std::span<const ClassId> current_labels,
                      ingest::ClassVocab& vocab, RelabelMode mode, double purity_threshold = 0.5);

double change_fraction(std::span<const ClassId> before, std::span<const ClassId> after);

struct StageOneConfig {
  patchnet::PatchNetConfig net;  // num_classes is set from the label set
  optim::TrainConfig train;
  int k_min = 10;
  int k_max = 31;
  int max_iterations = 4;
  double epsilon = 0.01;
  RelabelMode mode = RelabelMode::ClusterId;
  double purity_threshold = 0.5;
  double variance_target = 0.95;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IterationReport {
  int iteration = 0;
  double val_accuracy = 0.0;
  int epochs = 0;
  int pca_components = 0;
  int selected_k = 0;
  bool no_knee = false;
  double change_fraction = 0.0;
  std::vector<ClassId> minted_classes;
  std::string relabel_source;  // "clusters" or "predictions"
  bool reinitialized = false;
};

struct StageOneReport {
  std::vector<IterationReport> iterations;
  bool converged = false;
  bool final_refit = false;  // extra training pass after a class-set change on the last iteration
};

nlohmann::json to_json(const StageOneReport& report, const ingest::ClassVocab& vocab);

struct AuditEntry {
  int iteration = 0;
  std::size_t instance_id = 0;
  ClassId old_label = 0;
  ClassId new_label = 0;
  int cluster = 0;
};

struct StageOneResult {
  patchnet::PatchNet tau;
  std::vector<ClassId> head_classes;  // vocab class id of every tau output
  std::vector<std::size_t> instance_ids;  // train-bag instances first, then val-bag
  std::vector<ClassId> initial_labels;
  std::vector<ClassId> labels;
  StageOneReport report;
  std::vector<AuditEntry> audit;
  std::vector<optim::TrainHistory> histories;  // one per training pass
};

void write_audit_jsonl(std::span<const AuditEntry> audit, const ingest::ClassVocab& vocab,
                       const std::filesystem::path& path);

using ProgressFn = std::function<void(const std::string&)>;

StageOneResult stage_one(const PatchStore& store, std::span<const ingest::Bag> train_bags,
                         std::span<const ingest::Bag> val_bags, ingest::ClassVocab& vocab,
                         const StageOneConfig& cfg, const ProgressFn& progress = {});

// Pooled gfm2 of every image id, one row each.
Eigen::MatrixXd extract_all(const patchnet::PatchNet& tau, const PatchStore& store,
                            std::span<const std::size_t> image_ids);

struct StageTwoConfig {
  bagnet::BagNetConfig net;  // input_channels and class count are taken from tau and vocab
  optim::TrainConfig train;
  std::uint64_t seed = 0;
};

struct StageTwoResult {
  bagnet::BagNet omega;
  optim::TrainHistory history;
  double val_accuracy = 0.0;
  std::vector<double> val_predictions;  // setpoint per validation bag
};

// Patch maps computed once by tau, keyed by image id.
class FeatureCache {
 public:
  FeatureCache(const patchnet::PatchNet& tau, const PatchStore& store,
               std::span<const std::size_t> image_ids);
  const ops::FeatureMap& at(std::size_t image_id) const;
  int channels() const { return channels_; }

 private:
  std::unordered_map<std::size_t, ops::FeatureMap> maps_;
  int channels_ = 0;
};

StageTwoResult stage_two(const FeatureCache& cache, std::span<const ingest::Bag> train_bags,
                         std::span<const ingest::Bag> val_bags, const ingest::ClassVocab& vocab,
                         const StageTwoConfig& cfg);

// Setpoint predicted for every bag.
std::vector<double> predict_bags(const bagnet::BagNet& omega, const FeatureCache& cache,
                                 std::span<const ingest::Bag> bags);

}  // namespace orefeed::relabel

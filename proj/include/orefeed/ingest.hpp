#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "orefeed/common.hpp"

namespace orefeed::ingest {

struct LabSample {
  Minutes t = 0;
  double quality = 0.0;
};

struct FeedReading {
  Minutes t = 0;
  double setpoint = 0.0;  // tons; 0 means an empty belt
};

struct ImageRecord {
  Minutes t = 0;
  std::string path;  // relative to the manifest's directory unless absolute
  int width = 1024;
  int height = 400;
};

struct ProductionLog {
  std::vector<LabSample> labs;
  std::vector<FeedReading> feed;
  std::vector<ImageRecord> images;
  std::filesystem::path image_root;  // directory the manifest paths resolve against
};

// Ordered setpoint classes followed by classes minted during relabeling.
class ClassVocab {
 public:
  ClassVocab() = default;
  // Sorts and deduplicates. Setpoint class ids are their ascending rank.
  static ClassVocab from_setpoints(std::vector<double> setpoints);

  std::size_t size() const { return setpoints_.size() + cluster_classes_.size(); }
  std::size_t setpoint_count() const { return setpoints_.size(); }
  const std::vector<double>& setpoints() const { return setpoints_; }
  const std::vector<ClassId>& cluster_classes() const { return cluster_classes_; }

  bool contains(ClassId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }
  bool is_setpoint(ClassId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < setpoints_.size();
  }
  std::optional<ClassId> find_setpoint(double tons) const;
  ClassId setpoint_class(double tons) const;  // throws if absent
  double setpoint_of(ClassId id) const;       // throws for cluster classes
  ClassId mint();
  // "125" for setpoints, "C3" for the third minted class (1-based).
  std::string name(ClassId id) const;

 private:
  std::vector<double> setpoints_;
  std::vector<ClassId> cluster_classes_;
};

struct Bag {
  std::size_t bag_id = 0;
  Minutes t_start = 0;  // inclusive
  Minutes t_end = 0;    // exclusive
  ClassId label = 0;
  double setpoint = 0.0;
  LabSample lab;
  Minutes latency = 0;
  std::vector<std::size_t> instance_ids;  // indices into ProductionLog::images
};

struct DropReport {
  std::size_t below_qm = 0;
  std::size_t empty_window = 0;
  std::size_t ambiguous_label = 0;
  std::size_t total() const { return below_qm + empty_window + ambiguous_label; }
};

struct AssembleParams {
  Minutes n_latency = 90;
  Minutes window_w = 20;
  double q_m = 66.0;
  Minutes window_offset = 0;  // shifts the window end away from lab.t - n_latency
  double dominance = 0.8;
};

struct BagSet {
  std::vector<Bag> bags;
  ClassVocab vocab;
  DropReport report;
};

std::vector<LabSample> load_labs(const std::filesystem::path& path);
std::vector<FeedReading> load_feed(const std::filesystem::path& path);
std::vector<ImageRecord> load_image_manifest(const std::filesystem::path& path);
ProductionLog load_production_logs(const std::filesystem::path& lab_csv,
                                   const std::filesystem::path& feed_csv,
                                   const std::filesystem::path& image_manifest);
// labs.csv, feed.csv and images.jsonl inside one directory.
ProductionLog load_production_dir(const std::filesystem::path& dir);

// Mode of the setpoints when its share reaches `dominance`; nullopt means reject.
std::optional<double> aggregate_setpoint(std::span<const FeedReading> readings,
                                         double dominance = 0.8);

BagSet assemble_bags(const ProductionLog& log, const AssembleParams& params = {});

// Bag-level split. Both sides are non-empty; outputs keep input order.
std::pair<std::vector<Bag>, std::vector<Bag>> split_bags(const std::vector<Bag>& bags,
                                                         double ratio, std::uint64_t seed);

void write_bags_jsonl(const std::filesystem::path& path, const std::vector<Bag>& bags);
// Vocab is rebuilt from the stored setpoint labels; the drop report is empty.
BagSet read_bags_jsonl(const std::filesystem::path& path);

std::filesystem::path resolve_image_path(const ProductionLog& log, const ImageRecord& rec);

// Index range [first, last) of records with t in [t_start, t_end). Input must be time-sorted.
template <class Rec>
std::pair<std::size_t, std::size_t> time_range(std::span<const Rec> recs, Minutes t_start,
                                                Minutes t_end) {
  auto by_time = [](const Rec& r, Minutes t) { return r.t < t; };
  auto first = std::lower_bound(recs.begin(), recs.end(), t_start, by_time);
  auto last = std::lower_bound(first, recs.end(), t_end, by_time);
  return {static_cast<std::size_t>(first - recs.begin()),
          static_cast<std::size_t>(last - recs.begin())};
}

}  // namespace orefeed::ingest

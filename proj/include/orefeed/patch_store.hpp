#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "orefeed/imaging.hpp"
#include "orefeed/ingest.hpp"

namespace orefeed {

// Decoded camera frames keyed by image id (index into ProductionLog::images).
// Segments are cut on demand so only 8-bit frames stay resident.
class PatchStore {
 public:
  explicit PatchStore(imaging::SegmentGeometry geom) : geom_(geom) { geom_.validate(); }

  // Reads the PNG of every listed image id.
  static PatchStore load(const ingest::ProductionLog& log, std::span<const std::size_t> image_ids,
                         const imaging::SegmentGeometry& geom);

  void add(std::size_t image_id, imaging::Image8 frame);
  bool contains(std::size_t image_id) const { return frames_.count(image_id) != 0; }
  std::size_t size() const { return frames_.size(); }
  const imaging::SegmentGeometry& geometry() const { return geom_; }

  imaging::PatchImage patch(std::size_t image_id) const;
  // aug_seed selects an independent flip/brightness draw for every segment.
  std::vector<imaging::Segment> segments(std::size_t image_id,
                                         std::optional<std::uint64_t> aug_seed = {}) const;

 private:
  imaging::SegmentGeometry geom_;
  std::unordered_map<std::size_t, imaging::Image8> frames_;
};

// Every image id referenced by the bags, ascending and unique.
std::vector<std::size_t> bag_image_ids(std::span<const ingest::Bag> bags);

}  // namespace orefeed

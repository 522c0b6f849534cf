#include "orefeed/patch_store.hpp"

#include <algorithm>

#include "orefeed/common.hpp"
#include "orefeed/parallel.hpp"
#include "orefeed/random.hpp"

namespace orefeed {

PatchStore PatchStore::load(const ingest::ProductionLog& log,
                            std::span<const std::size_t> image_ids,
                            const imaging::SegmentGeometry& geom) {
  PatchStore store(geom);
  std::vector<imaging::Image8> frames(image_ids.size());
  parallel_for(image_ids.size(), [&](std::size_t i) {
    const std::size_t id = image_ids[i];
    if (id >= log.images.size()) throw PreconditionError("image id out of range");
    frames[i] = imaging::read_png(ingest::resolve_image_path(log, log.images[id]));
  });
  for (std::size_t i = 0; i < image_ids.size(); ++i) store.add(image_ids[i], std::move(frames[i]));
  return store;
}

void PatchStore::add(std::size_t image_id, imaging::Image8 frame) {
  if (frame.width != geom_.raw_width || frame.height != geom_.raw_height) {
    throw ShapeError("image " + std::to_string(image_id) + " is " + std::to_string(frame.width) +
                     "x" + std::to_string(frame.height) + ", geometry expects " +
                     std::to_string(geom_.raw_width) + "x" + std::to_string(geom_.raw_height));
  }
  frames_[image_id] = std::move(frame);
}

imaging::PatchImage PatchStore::patch(std::size_t image_id) const {
  const auto it = frames_.find(image_id);
  if (it == frames_.end()) throw PreconditionError("image " + std::to_string(image_id) + " not loaded");
  return imaging::downscale(it->second, geom_);
}

std::vector<imaging::Segment> PatchStore::segments(std::size_t image_id,
                                                   std::optional<std::uint64_t> aug_seed) const {
  auto segs = imaging::extract_segments(patch(image_id), geom_);
  if (aug_seed) {
    for (std::size_t s = 0; s < segs.size(); ++s) {
      segs[s] = imaging::augment(segs[s], derive_seed(*aug_seed, image_id, s));
    }
  }
  return segs;
}

std::vector<std::size_t> bag_image_ids(std::span<const ingest::Bag> bags) {
  std::vector<std::size_t> ids;
  for (const auto& b : bags) ids.insert(ids.end(), b.instance_ids.begin(), b.instance_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace orefeed

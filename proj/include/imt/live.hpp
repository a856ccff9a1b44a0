#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "imt/diversity.hpp"
#include "imt/segmentation.hpp"

namespace imt {

struct LiveResult {
  Mask hand_mask;
  SegmentationResult object;
  /// Absent while no projection has been fitted.
  std::optional<LivePoint> point;
  std::string status;  // "ok" or "projection unavailable"
  double latency_ms = 0.0;
};

/// Per-frame teaching loop: hand mask, gesture-conditioned object highlight, live
/// diversity point. The object segmenter can be swapped while frames are in flight.
class LivePipeline {
 public:
  LivePipeline(std::shared_ptr<const HandSegmenter> hands, std::shared_ptr<const ObjectSegmenter> objects);

  /// `active` < 0 means no active category: the point is placed but has no novelty.
  LiveResult process(const Frame& frame, CategoryId active, const DiversityEngine* engine) const;

  void set_object_segmenter(std::shared_ptr<const ObjectSegmenter> objects);
  std::shared_ptr<const ObjectSegmenter> object_segmenter() const;
  std::shared_ptr<const HandSegmenter> hand_segmenter() const { return hands_; }

 private:
  std::shared_ptr<const HandSegmenter> hands_;
  mutable std::mutex mu_;
  std::shared_ptr<const ObjectSegmenter> objects_;
};

/// Untrained 4-channel segmenter with the default configuration, used until a trained one is installed.
std::shared_ptr<const ObjectSegmenter> default_object_segmenter();

}  // namespace imt

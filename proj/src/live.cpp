#include "imt/live.hpp"

#include <chrono>

#include "imt/error.hpp"

namespace imt {

LivePipeline::LivePipeline(std::shared_ptr<const HandSegmenter> hands, std::shared_ptr<const ObjectSegmenter> objects)
    : hands_(std::move(hands)), objects_(std::move(objects)) {
  if (!hands_) fail(ErrorKind::invalid_argument, "live pipeline needs a hand segmenter");
  if (!objects_ || !objects_->loaded()) fail(ErrorKind::invalid_argument, "live pipeline needs a loaded object segmenter");
}

void LivePipeline::set_object_segmenter(std::shared_ptr<const ObjectSegmenter> objects) {
  if (!objects || !objects->loaded()) fail(ErrorKind::invalid_argument, "object segmenter not loaded");
  std::lock_guard lock(mu_);
  objects_ = std::move(objects);
}

std::shared_ptr<const ObjectSegmenter> LivePipeline::object_segmenter() const {
  std::lock_guard lock(mu_);
  return objects_;
}

LiveResult LivePipeline::process(const Frame& frame, CategoryId active, const DiversityEngine* engine) const {
  const auto t0 = std::chrono::steady_clock::now();
  frame.validate();
  LiveResult r;
  r.hand_mask = segment_hands(*hands_, frame);
  r.object = object_segmenter()->segment(frame, r.hand_mask);
  r.status = "projection unavailable";
  if (engine && engine->served()) {
    r.point = engine->live_point(frame, active);
    r.status = "ok";
  }
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::shared_ptr<const ObjectSegmenter> default_object_segmenter() {
  static const auto model = std::make_shared<const ObjectSegmenter>(ObjectSegmenter::create(SegModelConfig{}, 0));
  return model;
}

}  // namespace imt

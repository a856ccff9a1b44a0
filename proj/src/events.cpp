#include "imt/events.hpp"

#include <algorithm>

namespace imt {

bool is_coalescing_type(const std::string& type) { return type == "live_point" || type == "diversity_report"; }

void Subscription::push(const Event& e) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    if (is_coalescing_type(e.type)) {
      const auto stale = std::find_if(queue_.begin(), queue_.end(), [&](const Event& q) { return q.type == e.type; });
      if (stale != queue_.end()) {
        queue_.erase(stale);
        ++coalesced_;
      }
    }
    queue_.push_back(e);
  }
  cv_.notify_one();
}

std::optional<Event> Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, timeout, [this] { return closed_ || !queue_.empty(); })) return std::nullopt;
  if (queue_.empty()) return std::nullopt;
  Event e = std::move(queue_.front());
  queue_.pop_front();
  return e;
}

std::vector<Event> Subscription::drain() {
  std::lock_guard lock(mu_);
  std::vector<Event> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
  queue_.clear();
  return out;
}

void Subscription::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Subscription::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::size_t Subscription::coalesced() const {
  std::lock_guard lock(mu_);
  return coalesced_;
}

EventHub::EventHub(std::size_t ring_capacity) : capacity_(std::max<std::size_t>(1, ring_capacity)) {}

std::uint64_t EventHub::publish(std::string type, nlohmann::json payload) {
  std::lock_guard lock(mu_);
  Event e;
  e.seq = ++seq_;
  e.type = std::move(type);
  e.payload = std::move(payload);
  ring_.push_back(e);
  if (ring_.size() > capacity_) ring_.pop_front();
  // Pushing under the hub lock keeps every subscriber in publish order.
  for (const auto& s : subs_) s->push(e);
  return e.seq;
}

std::shared_ptr<Subscription> EventHub::subscribe(std::optional<std::uint64_t> last_seen) {
  auto s = std::make_shared<Subscription>();
  std::lock_guard lock(mu_);
  if (last_seen) {
    for (const Event& e : ring_) {
      if (e.seq > *last_seen) s->push(e);
    }
  }
  subs_.push_back(s);
  return s;
}

void EventHub::unsubscribe(const std::shared_ptr<Subscription>& s) {
  std::lock_guard lock(mu_);
  std::erase(subs_, s);
  s->close();
}

void EventHub::close_all() {
  std::lock_guard lock(mu_);
  for (const auto& s : subs_) s->close();
  subs_.clear();
}

std::vector<Event> EventHub::replay_since(std::uint64_t last_seen) const {
  std::lock_guard lock(mu_);
  std::vector<Event> out;
  for (const Event& e : ring_) {
    if (e.seq > last_seen) out.push_back(e);
  }
  return out;
}

std::uint64_t EventHub::last_seq() const {
  std::lock_guard lock(mu_);
  return seq_;
}

std::size_t EventHub::subscriber_count() const {
  std::lock_guard lock(mu_);
  return subs_.size();
}

std::string format_sse(const Event& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.type + "\ndata: " + e.envelope().dump() + "\n\n";
}

}  // namespace imt

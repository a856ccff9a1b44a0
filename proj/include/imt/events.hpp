#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace imt {

/// One envelope on a session's event stream.
struct Event {
  std::uint64_t seq = 0;
  std::string type;
  nlohmann::json payload;

  nlohmann::json envelope() const { return {{"seq", seq}, {"type", type}, {"payload", payload}}; }
};

/// Event types where only the newest undelivered instance matters.
bool is_coalescing_type(const std::string& type);

/// Per-subscriber queue. Publishing never blocks on a slow reader: a new live_point
/// (or diversity_report) replaces any queued one of the same type, so a throttled
/// consumer sees the freshest value and never an older one after a newer one.
class Subscription {
 public:
  /// Waits up to `timeout` for the next event. nullopt on timeout or after close().
  std::optional<Event> next(std::chrono::milliseconds timeout);
  /// Everything queued right now, without waiting.
  std::vector<Event> drain();
  void close();
  bool closed() const;
  std::size_t coalesced() const;

 private:
  friend class EventHub;
  void push(const Event& e);

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> queue_;
  bool closed_ = false;
  std::size_t coalesced_ = 0;
};

/// Fan-out with a replay ring buffer. Sequence numbers start at 1 and are gap-free.
class EventHub {
 public:
  explicit EventHub(std::size_t ring_capacity = 256);

  std::uint64_t publish(std::string type, nlohmann::json payload);

  /// New subscriber. With `last_seen`, buffered events with seq > last_seen are queued first
  /// (as far back as the ring reaches).
  std::shared_ptr<Subscription> subscribe(std::optional<std::uint64_t> last_seen = std::nullopt);
  void unsubscribe(const std::shared_ptr<Subscription>& s);
  void close_all();

  std::vector<Event> replay_since(std::uint64_t last_seen) const;
  std::uint64_t last_seq() const;
  std::size_t subscriber_count() const;

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::deque<Event> ring_;
  std::uint64_t seq_ = 0;
  std::vector<std::shared_ptr<Subscription>> subs_;
};

/// "id: <seq>\nevent: <type>\ndata: <envelope json>\n\n"
std::string format_sse(const Event& e);

}  // namespace imt

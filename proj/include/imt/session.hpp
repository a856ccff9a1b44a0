#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "imt/image.hpp"

namespace imt {

struct ClassifierSnapshot;
struct Projection2D;

using CategoryId = int;
using Rgb = std::array<std::uint8_t, 3>;

struct Category {
  CategoryId id = 0;
  std::string name;
  Rgb color{0, 0, 0};

  friend bool operator==(const Category&, const Category&) = default;
};

enum class GestureType { exhibiting, pointing, presenting, touching };
inline constexpr std::array<GestureType, 4> kAllGestures{GestureType::exhibiting, GestureType::pointing,
                                                         GestureType::presenting, GestureType::touching};

/// How the object mask of a sample was obtained.
enum class Condition { naive, click, contour, in_situ };
inline constexpr std::array<Condition, 4> kAllConditions{Condition::naive, Condition::click, Condition::contour,
                                                         Condition::in_situ};

enum class Phase { teaching, training, assessing };

std::string_view to_string(GestureType g);
std::string_view to_string(Condition c);
std::string_view to_string(Phase p);
GestureType parse_gesture(std::string_view s);
Condition parse_condition(std::string_view s);

/// One captured demonstration. Immutable once it enters a TeachingSet.
struct TeachingSample {
  std::string sample_id;
  std::shared_ptr<const Frame> frame;
  CategoryId category_id = 0;
  std::shared_ptr<const Mask> object_mask;  // null when absent
  std::shared_ptr<const Mask> hand_mask;    // null when absent
  std::int64_t captured_at = 0;             // ms since epoch, server clock
  Condition condition = Condition::naive;
};

/// Throws invalid_argument when the sample breaks its own invariants
/// (frame contract, mask dimensions, in_situ needs a mask, naive has none).
void validate_sample(const TeachingSample& s);

struct TeachingSet {
  std::vector<TeachingSample> samples;
  std::vector<Category> categories;

  const Category* find_category(CategoryId id) const;
  const TeachingSample* find_sample(std::string_view sample_id) const;
  std::size_t count(CategoryId id) const;
};

/// Every category appears in the result, zero counts included.
std::map<CategoryId, std::size_t> counts_per_category(const TeachingSet& set);

struct SessionState {
  TeachingSet teaching_set;
  std::optional<CategoryId> active_category;
  std::shared_ptr<const ClassifierSnapshot> latest_snapshot;
  std::shared_ptr<const Projection2D> projection;
  Phase phase = Phase::teaching;
};

// Value-semantics transitions. Each returns the updated state and leaves the input untouched.
SessionState add_category(SessionState state, Category category);
SessionState add_sample(SessionState state, TeachingSample sample);
SessionState remove_sample(SessionState state, std::string_view sample_id);
/// Only teaching -> training -> assessing -> teaching is allowed (plus identity).
SessionState transition(SessionState state, Phase next);
bool transition_allowed(Phase from, Phase to);

struct SessionEvent {
  enum class Kind { sample_added, sample_removed };
  Kind kind;
  std::string sample_id;
  CategoryId category_id;
};

/// Single-writer owner of a SessionState. Mutations are serialized; readers
/// get immutable snapshots that stay valid after later mutations.
class Session {
 public:
  using Clock = std::function<std::int64_t()>;
  using Listener = std::function<void(const SessionEvent&)>;

  explicit Session(Clock clock = {});
  explicit Session(TeachingSet imported, Clock clock = {});

  std::shared_ptr<const SessionState> snapshot() const;

  void add_category(Category c);
  /// Builds a sample with a fresh id and server-side timestamp, validates and appends it.
  TeachingSample capture(std::shared_ptr<const Frame> frame, CategoryId category, Condition condition,
                         std::shared_ptr<const Mask> object_mask = nullptr,
                         std::shared_ptr<const Mask> hand_mask = nullptr);
  void add_sample(TeachingSample s);
  void remove_sample(std::string_view sample_id);
  void set_active_category(std::optional<CategoryId> id);
  void set_phase(Phase p);
  void set_snapshot(std::shared_ptr<const ClassifierSnapshot> s);
  void set_projection(std::shared_ptr<const Projection2D> p);

  /// Listeners run on the writer's thread after the mutation is committed.
  void subscribe(Listener l);

 private:
  void commit(SessionState next, std::optional<SessionEvent> ev);
  std::string next_sample_id(const SessionState& s);

  mutable std::mutex mu_;
  std::shared_ptr<const SessionState> state_;
  std::vector<Listener> listeners_;
  Clock clock_;
  std::uint64_t id_counter_ = 0;
};

std::int64_t now_ms();

// Session export: <dir>/session.json, frames/<id>.png, masks/<id>.png (object),
// masks/<id>.hand.png (hand).
void export_session(const TeachingSet& set, const std::filesystem::path& dir);
TeachingSet import_session(const std::filesystem::path& dir);

}  // namespace imt

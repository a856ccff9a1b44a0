#include "imt/session.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "imt/codec.hpp"
#include "imt/error.hpp"

namespace imt {

using nlohmann::json;

std::string_view to_string(GestureType g) {
  switch (g) {
    case GestureType::exhibiting: return "exhibiting";
    case GestureType::pointing: return "pointing";
    case GestureType::presenting: return "presenting";
    case GestureType::touching: return "touching";
  }
  return "?";
}

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::naive: return "naive";
    case Condition::click: return "click";
    case Condition::contour: return "contour";
    case Condition::in_situ: return "in_situ";
  }
  return "?";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::teaching: return "teaching";
    case Phase::training: return "training";
    case Phase::assessing: return "assessing";
  }
  return "?";
}

GestureType parse_gesture(std::string_view s) {
  for (GestureType g : kAllGestures) {
    if (to_string(g) == s) return g;
  }
  fail(ErrorKind::invalid_argument, "unknown gesture type: " + std::string(s));
}

Condition parse_condition(std::string_view s) {
  for (Condition c : kAllConditions) {
    if (to_string(c) == s) return c;
  }
  fail(ErrorKind::invalid_argument, "unknown condition: " + std::string(s));
}

void validate_sample(const TeachingSample& s) {
  if (s.sample_id.empty()) fail(ErrorKind::invalid_argument, "sample id must be non-empty");
  if (!s.frame) fail(ErrorKind::invalid_argument, "sample has no frame");
  s.frame->validate();
  if (s.object_mask) require_same_shape(*s.frame, *s.object_mask, "object mask");
  if (s.hand_mask) require_same_shape(*s.frame, *s.hand_mask, "hand mask");
  if (s.condition == Condition::in_situ && !s.object_mask) {
    fail(ErrorKind::invalid_argument, "mask required: in_situ samples carry an object mask");
  }
  if (s.condition == Condition::naive && s.object_mask) {
    fail(ErrorKind::invalid_argument, "naive samples are captured without an object mask");
  }
}

const Category* TeachingSet::find_category(CategoryId id) const {
  auto it = std::find_if(categories.begin(), categories.end(), [id](const Category& c) { return c.id == id; });
  return it == categories.end() ? nullptr : &*it;
}

const TeachingSample* TeachingSet::find_sample(std::string_view sample_id) const {
  auto it = std::find_if(samples.begin(), samples.end(),
                         [sample_id](const TeachingSample& s) { return s.sample_id == sample_id; });
  return it == samples.end() ? nullptr : &*it;
}

std::size_t TeachingSet::count(CategoryId id) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [id](const TeachingSample& s) { return s.category_id == id; }));
}

std::map<CategoryId, std::size_t> counts_per_category(const TeachingSet& set) {
  std::map<CategoryId, std::size_t> out;
  for (const Category& c : set.categories) out[c.id] = 0;
  for (const TeachingSample& s : set.samples) ++out[s.category_id];
  return out;
}

SessionState add_category(SessionState state, Category category) {
  if (category.name.empty()) fail(ErrorKind::invalid_argument, "category name must be non-empty");
  if (state.teaching_set.find_category(category.id)) {
    fail(ErrorKind::invalid_argument, "duplicate category id " + std::to_string(category.id));
  }
  state.teaching_set.categories.push_back(std::move(category));
  return state;
}

SessionState add_sample(SessionState state, TeachingSample sample) {
  if (!state.teaching_set.find_category(sample.category_id)) {
    fail(ErrorKind::invalid_argument, "unknown category id " + std::to_string(sample.category_id));
  }
  validate_sample(sample);
  if (state.teaching_set.find_sample(sample.sample_id)) {
    fail(ErrorKind::invalid_argument, "duplicate sample id " + sample.sample_id);
  }
  state.teaching_set.samples.push_back(std::move(sample));
  return state;
}

SessionState remove_sample(SessionState state, std::string_view sample_id) {
  auto& v = state.teaching_set.samples;
  auto it = std::find_if(v.begin(), v.end(), [sample_id](const TeachingSample& s) { return s.sample_id == sample_id; });
  if (it == v.end()) fail(ErrorKind::not_found, "unknown sample id " + std::string(sample_id));
  v.erase(it);
  return state;
}

bool transition_allowed(Phase from, Phase to) {
  if (from == to) return true;
  return (from == Phase::teaching && to == Phase::training) || (from == Phase::training && to == Phase::assessing) ||
         (from == Phase::assessing && to == Phase::teaching);
}

SessionState transition(SessionState state, Phase next) {
  if (!transition_allowed(state.phase, next)) {
    fail(ErrorKind::conflict,
         "phase transition " + std::string(to_string(state.phase)) + " -> " + std::string(to_string(next)));
  }
  state.phase = next;
  return state;
}

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

Session::Session(Clock clock) : state_(std::make_shared<SessionState>()), clock_(std::move(clock)) {
  if (!clock_) clock_ = now_ms;
}

Session::Session(TeachingSet imported, Clock clock) : Session(std::move(clock)) {
  SessionState s;
  for (Category& c : imported.categories) s = imt::add_category(std::move(s), std::move(c));
  for (TeachingSample& smp : imported.samples) s = imt::add_sample(std::move(s), std::move(smp));
  state_ = std::make_shared<SessionState>(std::move(s));
}

std::shared_ptr<const SessionState> Session::snapshot() const {
  std::lock_guard lock(mu_);
  return state_;
}

void Session::commit(SessionState next, std::optional<SessionEvent> ev) {
  state_ = std::make_shared<SessionState>(std::move(next));
  if (ev) {
    for (const Listener& l : listeners_) l(*ev);
  }
}

std::string Session::next_sample_id(const SessionState& s) {
  std::string id;
  do {
    id = "s" + std::to_string(++id_counter_);
  } while (s.teaching_set.find_sample(id));
  return id;
}

void Session::add_category(Category c) {
  std::lock_guard lock(mu_);
  commit(imt::add_category(*state_, std::move(c)), std::nullopt);
}

TeachingSample Session::capture(std::shared_ptr<const Frame> frame, CategoryId category, Condition condition,
                                std::shared_ptr<const Mask> object_mask, std::shared_ptr<const Mask> hand_mask) {
  std::lock_guard lock(mu_);
  TeachingSample s;
  s.sample_id = next_sample_id(*state_);
  s.frame = std::move(frame);
  s.category_id = category;
  s.object_mask = std::move(object_mask);
  s.hand_mask = std::move(hand_mask);
  s.captured_at = clock_();
  s.condition = condition;
  SessionState next = imt::add_sample(*state_, s);
  if (next.phase == Phase::assessing) next = transition(std::move(next), Phase::teaching);
  commit(std::move(next), SessionEvent{SessionEvent::Kind::sample_added, s.sample_id, s.category_id});
  return s;
}

void Session::add_sample(TeachingSample s) {
  std::lock_guard lock(mu_);
  SessionEvent ev{SessionEvent::Kind::sample_added, s.sample_id, s.category_id};
  commit(imt::add_sample(*state_, std::move(s)), ev);
}

void Session::remove_sample(std::string_view sample_id) {
  std::lock_guard lock(mu_);
  const TeachingSample* s = state_->teaching_set.find_sample(sample_id);
  if (!s) fail(ErrorKind::not_found, "unknown sample id " + std::string(sample_id));
  SessionEvent ev{SessionEvent::Kind::sample_removed, s->sample_id, s->category_id};
  commit(imt::remove_sample(*state_, sample_id), ev);
}

void Session::set_active_category(std::optional<CategoryId> id) {
  std::lock_guard lock(mu_);
  if (id && !state_->teaching_set.find_category(*id)) {
    fail(ErrorKind::invalid_argument, "unknown category id " + std::to_string(*id));
  }
  SessionState next = *state_;
  next.active_category = id;
  commit(std::move(next), std::nullopt);
}

void Session::set_phase(Phase p) {
  std::lock_guard lock(mu_);
  commit(transition(*state_, p), std::nullopt);
}

void Session::set_snapshot(std::shared_ptr<const ClassifierSnapshot> s) {
  std::lock_guard lock(mu_);
  SessionState next = *state_;
  next.latest_snapshot = std::move(s);
  commit(std::move(next), std::nullopt);
}

void Session::set_projection(std::shared_ptr<const Projection2D> p) {
  std::lock_guard lock(mu_);
  SessionState next = *state_;
  next.projection = std::move(p);
  commit(std::move(next), std::nullopt);
}

void Session::subscribe(Listener l) {
  std::lock_guard lock(mu_);
  listeners_.push_back(std::move(l));
}

void export_session(const TeachingSet& set, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "masks");
  json doc;
  doc["schema_version"] = 1;
  doc["categories"] = json::array();
  for (const Category& c : set.categories) {
    doc["categories"].push_back({{"id", c.id}, {"name", c.name}, {"color", {c.color[0], c.color[1], c.color[2]}}});
  }
  doc["samples"] = json::array();
  for (const TeachingSample& s : set.samples) {
    json rec{{"sample_id", s.sample_id},
             {"category_id", s.category_id},
             {"condition", to_string(s.condition)},
             {"captured_at", s.captured_at},
             {"frame", "frames/" + s.sample_id + ".png"},
             {"object_mask", nullptr},
             {"hand_mask", nullptr}};
    write_png(dir / "frames" / (s.sample_id + ".png"), *s.frame);
    if (s.object_mask) {
      rec["object_mask"] = "masks/" + s.sample_id + ".png";
      write_png(dir / "masks" / (s.sample_id + ".png"), *s.object_mask);
    }
    if (s.hand_mask) {
      rec["hand_mask"] = "masks/" + s.sample_id + ".hand.png";
      write_png(dir / "masks" / (s.sample_id + ".hand.png"), *s.hand_mask);
    }
    doc["samples"].push_back(std::move(rec));
  }
  std::ofstream out(dir / "session.json");
  if (!out) fail(ErrorKind::io, "cannot write session.json in " + dir.string());
  out << doc.dump(2) << '\n';
}

TeachingSet import_session(const std::filesystem::path& dir) {
  std::ifstream in(dir / "session.json");
  if (!in) fail(ErrorKind::io, "cannot open " + (dir / "session.json").string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::io, std::string("session.json: ") + e.what());
  }
  TeachingSet set;
  try {
    for (const json& c : doc.at("categories")) {
      Category cat;
      cat.id = c.at("id").get<int>();
      cat.name = c.at("name").get<std::string>();
      const auto rgb = c.at("color").get<std::vector<int>>();
      if (rgb.size() != 3) fail(ErrorKind::invalid_argument, "category color must have 3 components");
      for (int i = 0; i < 3; ++i) cat.color[i] = static_cast<std::uint8_t>(rgb[i]);
      set.categories.push_back(std::move(cat));
    }
    for (const json& r : doc.at("samples")) {
      TeachingSample s;
      s.sample_id = r.at("sample_id").get<std::string>();
      s.category_id = r.at("category_id").get<int>();
      s.condition = parse_condition(r.at("condition").get<std::string>());
      s.captured_at = r.at("captured_at").get<std::int64_t>();
      s.frame = std::make_shared<const Frame>(read_frame_png(dir / r.at("frame").get<std::string>()));
      if (!r.at("object_mask").is_null()) {
        s.object_mask = std::make_shared<const Mask>(read_mask_png(dir / r.at("object_mask").get<std::string>()));
      }
      if (r.contains("hand_mask") && !r.at("hand_mask").is_null()) {
        s.hand_mask = std::make_shared<const Mask>(read_mask_png(dir / r.at("hand_mask").get<std::string>()));
      }
      set.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("session.json schema: ") + e.what());
  }
  // Run through the same checks as live captures.
  SessionState check;
  for (const Category& c : set.categories) check = add_category(std::move(check), c);
  for (const TeachingSample& s : set.samples) check = add_sample(std::move(check), s);
  return set;
}

}  // namespace imt

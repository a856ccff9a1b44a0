#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "helpers.hpp"
#include "imt/codec.hpp"
#include "imt/error.hpp"
#include "imt/session.hpp"

using namespace imt;
using testing::rect;
using testing::solid_frame;

namespace {

std::shared_ptr<const Frame> gray(int w = 32, int h = 24) {
  return std::make_shared<const Frame>(solid_frame(w, h, {128, 128, 128}));
}

TeachingSample sample(const std::string& id, CategoryId c, Condition cond = Condition::naive,
                      std::shared_ptr<const Mask> mask = nullptr) {
  TeachingSample s;
  s.sample_id = id;
  s.frame = gray();
  s.category_id = c;
  s.condition = cond;
  s.object_mask = std::move(mask);
  return s;
}

SessionState two_categories() {
  SessionState st;
  st = add_category(st, {0, "cup", {255, 0, 0}});
  st = add_category(st, {1, "book", {0, 0, 255}});
  return st;
}

std::multiset<std::pair<std::string, CategoryId>> contents(const TeachingSet& s) {
  std::multiset<std::pair<std::string, CategoryId>> out;
  for (const auto& x : s.samples) out.insert({x.sample_id, x.category_id});
  return out;
}

}  // namespace

TEST_SUITE("frame contract") {
  TEST_CASE("size limits") {
    CHECK_NOTHROW(Frame(16, 16).validate());
    CHECK_NOTHROW(Frame(1920, 1080).validate());
    CHECK_THROWS_AS(Frame(15, 40).validate(), Error);
    CHECK_THROWS_AS(Frame(1921, 100).validate(), Error);
    CHECK_THROWS_AS(Frame(100, 1081).validate(), Error);
    Frame bad(20, 20);
    bad.pixels.pop_back();
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("mask helpers") {
    Mask m = rect(10, 10, 2, 2, 3, 4);
    CHECK(m.area() == 12);
    m.at(0, 0) = 127;  // below threshold
    CHECK(m.area() == 12);
    CHECK(m.binary255().at(0, 0) == 0);
    const Mask t = translate(m, 5, 0);
    CHECK(t.area() == 12);
    CHECK(t.on(7, 2));
    CHECK(translate(m, 20, 0).empty());
  }

  TEST_CASE("resize keeps the binary alphabet") {
    const Mask m = rect(40, 40, 10, 10, 20, 20);
    const Mask r = resize_mask(m, 17, 23);
    CHECK(r.width == 17);
    CHECK(r.height == 23);
    for (auto v : r.values) CHECK((v == 0 || v == 255));
  }
}

TEST_SUITE("codec") {
  TEST_CASE("png round trip") {
    std::mt19937_64 rng(1);
    const Frame f = testing::noise_frame(33, 17, rng);
    CHECK(decode_frame_png(encode_png(f)) == f);
    const Mask m = rect(20, 18, 3, 4, 5, 6);
    CHECK(decode_mask_png(encode_png(m)) == m);
    const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
    CHECK_THROWS_AS(decode_frame_png(junk), Error);
  }

  TEST_CASE("base64 and sha256 known vectors") {
    const std::string s = "foobar";
    const std::vector<std::uint8_t> bytes(s.begin(), s.end());
    CHECK(base64_encode(bytes) == "Zm9vYmFy");
    CHECK(base64_decode("Zm9vYg==") == std::vector<std::uint8_t>{'f', 'o', 'o', 'b'});
    CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}

TEST_SUITE("core model") {
  TEST_CASE("counts after insertion") {
    SessionState st = two_categories();
    st = add_sample(st, sample("a", 0));
    CHECK(counts_per_category(st.teaching_set) == std::map<CategoryId, std::size_t>{{0, 1}, {1, 0}});

    for (int i = 0; i < 2; ++i) st = add_sample(st, sample("c" + std::to_string(i), 0));
    for (int i = 0; i < 2; ++i) st = add_sample(st, sample("b" + std::to_string(i), 1));
    CHECK(counts_per_category(st.teaching_set) == std::map<CategoryId, std::size_t>{{0, 3}, {1, 2}});
    st = add_sample(st, sample("b2", 1));
    CHECK(counts_per_category(st.teaching_set) == std::map<CategoryId, std::size_t>{{0, 3}, {1, 3}});
  }

  TEST_CASE("empty set lists every category with zero") {
    CHECK(counts_per_category(two_categories().teaching_set) == std::map<CategoryId, std::size_t>{{0, 0}, {1, 0}});
  }

  TEST_CASE("twelve samples from one participant") {
    SessionState st = two_categories();
    for (int i = 0; i < 12; ++i) st = add_sample(st, sample("p000-" + std::to_string(i), i % 2));
    std::size_t sum = 0;
    for (auto [c, n] : counts_per_category(st.teaching_set)) sum += n;
    CHECK(sum == 12);
  }

  TEST_CASE("in_situ sample needs a mask of frame size") {
    SessionState st = two_categories();
    try {
      add_sample(st, sample("x", 0, Condition::in_situ));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::invalid_argument);
      CHECK(std::string(e.what()).find("mask required") != std::string::npos);
    }
    auto wrong = std::make_shared<const Mask>(rect(10, 10, 0, 0, 2, 2));
    CHECK_THROWS_AS(add_sample(st, sample("x", 0, Condition::in_situ, wrong)), Error);
    auto right = std::make_shared<const Mask>(rect(32, 24, 0, 0, 2, 2));
    CHECK(add_sample(st, sample("x", 0, Condition::in_situ, right)).teaching_set.samples.size() == 1);
    CHECK_THROWS_AS(add_sample(st, sample("y", 0, Condition::naive, right)), Error);
  }

  TEST_CASE("unknown category and duplicate ids are rejected") {
    SessionState st = two_categories();
    CHECK_THROWS_AS(add_sample(st, sample("a", 9)), Error);
    st = add_sample(st, sample("a", 0));
    CHECK_THROWS_AS(add_sample(st, sample("a", 1)), Error);
    CHECK_THROWS_AS(add_category(st, {0, "again", {}}), Error);
  }

  TEST_CASE("remove") {
    SessionState st = two_categories();
    try {
      remove_sample(st, "nope");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::not_found);
    }
    st = add_sample(st, sample("a", 0));
    st = add_sample(st, sample("b", 0));
    st = remove_sample(st, "a");
    CHECK(st.teaching_set.count(0) == 1);
  }

  TEST_CASE("add then remove is identity on contents") {
    SessionState base = two_categories();
    base = add_sample(base, sample("k1", 1));
    const SessionState after = remove_sample(add_sample(base, sample("n", 0)), "n");
    CHECK(contents(after.teaching_set) == contents(base.teaching_set));
    CHECK(after.teaching_set.categories == base.teaching_set.categories);
  }

  TEST_CASE("phase cycle") {
    CHECK(transition_allowed(Phase::teaching, Phase::training));
    CHECK(transition_allowed(Phase::training, Phase::assessing));
    CHECK(transition_allowed(Phase::assessing, Phase::teaching));
    CHECK_FALSE(transition_allowed(Phase::teaching, Phase::assessing));
    CHECK_FALSE(transition_allowed(Phase::training, Phase::teaching));
    CHECK_FALSE(transition_allowed(Phase::assessing, Phase::training));
    SessionState st;
    CHECK_THROWS_AS(transition(st, Phase::assessing), Error);
  }

  TEST_CASE("enum names round trip") {
    for (GestureType g : kAllGestures) CHECK(parse_gesture(to_string(g)) == g);
    for (Condition c : kAllConditions) CHECK(parse_condition(to_string(c)) == c);
    CHECK_THROWS_AS(parse_gesture("waving"), Error);
  }
}

TEST_SUITE("session") {
  TEST_CASE("server clock, fresh ids, snapshots stay valid") {
    std::int64_t t = 1000;
    Session s([&] { return t++; });
    s.add_category({0, "cup", {}});
    const auto before = s.snapshot();
    const auto a = s.capture(gray(), 0, Condition::naive);
    const auto b = s.capture(gray(), 0, Condition::naive);
    CHECK(a.sample_id != b.sample_id);
    CHECK(a.captured_at == 1000);
    CHECK(b.captured_at == 1001);
    CHECK(before->teaching_set.samples.empty());
    CHECK(s.snapshot()->teaching_set.samples.size() == 2);
  }

  TEST_CASE("capture while assessing returns to teaching") {
    Session s;
    s.add_category({0, "cup", {}});
    s.set_phase(Phase::training);
    s.set_phase(Phase::assessing);
    s.capture(gray(), 0, Condition::naive);
    CHECK(s.snapshot()->phase == Phase::teaching);
    CHECK_THROWS_AS(s.set_phase(Phase::assessing), Error);
  }

  TEST_CASE("active category must exist") {
    Session s;
    s.add_category({3, "cup", {}});
    s.set_active_category(3);
    CHECK(s.snapshot()->active_category == 3);
    CHECK_THROWS_AS(s.set_active_category(4), Error);
    s.set_active_category(std::nullopt);
    CHECK_FALSE(s.snapshot()->active_category.has_value());
  }

  TEST_CASE("counts agree with a replay of the event log under fuzzed sequences") {
    std::mt19937_64 rng(99);
    for (int round = 0; round < 30; ++round) {
      Session s;
      std::map<std::string, CategoryId> log;
      int events = 0;
      s.subscribe([&](const SessionEvent& ev) {
        ++events;
        if (ev.kind == SessionEvent::Kind::sample_added) {
          CHECK(log.emplace(ev.sample_id, ev.category_id).second);
        } else {
          CHECK(log.erase(ev.sample_id) == 1);
        }
      });
      const int k = 1 + round % 4;
      for (int i = 0; i < k; ++i) s.add_category({i, "c" + std::to_string(i), {}});
      int ok_ops = 0;
      for (int step = 0; step < 80; ++step) {
        const auto st = s.snapshot();
        const auto r = rng() % 10;
        try {
          if (r < 6 || st->teaching_set.samples.empty()) {
            s.capture(gray(), static_cast<int>(rng() % (k + 1)), Condition::naive);
          } else if (r < 9) {
            s.remove_sample(st->teaching_set.samples[rng() % st->teaching_set.samples.size()].sample_id);
          } else {
            s.remove_sample("zzz");
          }
          ++ok_ops;
        } catch (const Error&) {
        }
        std::map<CategoryId, std::size_t> oracle;
        for (int i = 0; i < k; ++i) oracle[i] = 0;
        for (const auto& [id, c] : log) ++oracle[c];
        const auto now = s.snapshot();
        REQUIRE(counts_per_category(now->teaching_set) == oracle);
        std::size_t sum = 0;
        for (auto [c, n] : oracle) sum += n;
        REQUIRE(sum == now->teaching_set.samples.size());
      }
      CHECK(events == ok_ops);
    }
  }

  TEST_CASE("export and import round trip") {
    testing::TempDir dir("export");
    Session s;
    s.add_category({0, "cup", {200, 10, 10}});
    s.add_category({5, "book", {10, 10, 200}});
    std::mt19937_64 rng(4);
    auto f1 = std::make_shared<const Frame>(testing::noise_frame(40, 30, rng));
    auto f2 = std::make_shared<const Frame>(testing::noise_frame(40, 30, rng));
    auto m = std::make_shared<const Mask>(rect(40, 30, 5, 5, 10, 10));
    auto h = std::make_shared<const Mask>(rect(40, 30, 15, 5, 4, 4));
    s.capture(f1, 0, Condition::naive);
    s.capture(f2, 5, Condition::in_situ, m, h);
    s.capture(f2, 5, Condition::contour, m);
    const TeachingSet& a = s.snapshot()->teaching_set;
    export_session(a, dir.path);
    const TeachingSet b = import_session(dir.path);
    CHECK(b.categories == a.categories);
    REQUIRE(b.samples.size() == a.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      CHECK(b.samples[i].sample_id == a.samples[i].sample_id);
      CHECK(b.samples[i].category_id == a.samples[i].category_id);
      CHECK(b.samples[i].condition == a.samples[i].condition);
      CHECK(b.samples[i].captured_at == a.samples[i].captured_at);
      CHECK(*b.samples[i].frame == *a.samples[i].frame);
      CHECK((b.samples[i].object_mask != nullptr) == (a.samples[i].object_mask != nullptr));
      CHECK((b.samples[i].hand_mask != nullptr) == (a.samples[i].hand_mask != nullptr));
      if (a.samples[i].object_mask) CHECK(*b.samples[i].object_mask == *a.samples[i].object_mask);
      if (a.samples[i].hand_mask) CHECK(*b.samples[i].hand_mask == *a.samples[i].hand_mask);
    }
    CHECK_THROWS_AS(import_session(dir.path / "missing"), Error);
  }
}

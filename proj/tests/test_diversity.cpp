#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "helpers.hpp"
#include "imt/diversity.hpp"
#include "imt/error.hpp"

using namespace imt;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<std::vector<float>> random_embeddings(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0, 1);
  std::vector<std::vector<float>> out(n, std::vector<float>(d));
  for (auto& v : out) {
    for (auto& x : v) x = g(rng);
  }
  return out;
}

}  // namespace

TEST_SUITE("projection") {
  TEST_CASE("2x2 covariance closed form") {
    const std::vector<std::vector<float>> pts{{0, 0}, {2, 0}, {0, 1}};
    const Projection2D p = fit_projection(pts);
    // Covariance of the three points, then the dominant eigenvector in closed form.
    const double mx = 2.0 / 3, my = 1.0 / 3;
    double a = 0, b = 0, c = 0;
    for (const auto& v : pts) {
      a += (v[0] - mx) * (v[0] - mx);
      b += (v[0] - mx) * (v[1] - my);
      c += (v[1] - my) * (v[1] - my);
    }
    const double l1 = (a + c) / 2 + std::sqrt((a - c) * (a - c) / 4 + b * b);
    const double l2 = (a + c) / 2 - std::sqrt((a - c) * (a - c) / 4 + b * b);
    double ex = b, ey = l1 - a;
    const double norm = std::hypot(ex, ey);
    ex /= norm;
    ey /= norm;
    if (std::abs(ey) > std::abs(ex) ? ey < 0 : ex < 0) {
      ex = -ex;
      ey = -ey;
    }
    CHECK(p.basis[0][0] == doctest::Approx(ex).epsilon(1e-9));
    CHECK(p.basis[0][1] == doctest::Approx(ey).epsilon(1e-9));
    CHECK(std::abs(p.basis[0][0]) > std::abs(p.basis[0][1]));  // roughly the x axis
    CHECK(p.explained[0] == doctest::Approx(l1 / (l1 + l2)).epsilon(1e-9));
  }

  TEST_CASE("rank one and single point") {
    std::vector<std::vector<float>> line;
    for (int i = 0; i < 12; ++i) line.push_back({1.0f + i, 2.0f - 2.0f * i, 0.5f * i, 3.0f});
    const Projection2D p = fit_projection(line);
    CHECK(std::abs(p.explained[0] - 1.0) <= 1e-6);
    CHECK(std::abs(p.explained[1]) <= 1e-6);
    CHECK(std::abs(dot(p.basis[0], p.basis[1])) <= 1e-6);
    CHECK(std::abs(dot(p.basis[1], p.basis[1]) - 1.0) <= 1e-6);

    const Projection2D one = fit_projection({{4, 5, 6}});
    const std::vector<float> same{4, 5, 6};
    CHECK(project(one, same) == Point2{0, 0});
  }

  TEST_CASE("orthonormal, deterministic, sign convention") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
      const auto e = random_embeddings(4 + t, 3 + t % 7, rng);
      const Projection2D p = fit_projection(e);
      const Projection2D q = fit_projection(e);
      CHECK(p.basis == q.basis);
      CHECK(std::abs(dot(p.basis[0], p.basis[0]) - 1) <= 1e-6);
      CHECK(std::abs(dot(p.basis[1], p.basis[1]) - 1) <= 1e-6);
      CHECK(std::abs(dot(p.basis[0], p.basis[1])) <= 1e-6);
      for (const auto& v : p.basis) {
        const auto it = std::max_element(v.begin(), v.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
        CHECK(*it > 0);
      }
      CHECK(p.explained[0] >= p.explained[1]);
    }
    CHECK_THROWS_AS(fit_projection({}), Error);
    CHECK_THROWS_AS(fit_projection({{1}, {2}}), Error);
    CHECK_THROWS_AS(fit_projection({{1, 2}, {1, 2, 3}}), Error);
  }

  TEST_CASE("project: mean, affine identity, brute-force dot products") {
    std::mt19937_64 rng(3);
    const auto e = random_embeddings(30, 8, rng);
    const Projection2D p = fit_projection(e);
    std::vector<float> mean(p.mean.begin(), p.mean.end());
    const Point2 m = project(p, mean);
    CHECK(std::abs(m.x) < 1e-6);
    CHECK(std::abs(m.y) < 1e-6);
    const auto r = random_embeddings(3, 8, rng);
    std::vector<float> sum(8), zero(8, 0.0f);
    for (int i = 0; i < 8; ++i) sum[i] = r[0][i] + r[1][i];
    const Point2 ab = project(p, sum), a = project(p, r[0]), b = project(p, r[1]), z = project(p, zero);
    CHECK(std::abs(ab.x - a.x - b.x + z.x) < 1e-5);
    CHECK(std::abs(ab.y - a.y - b.y + z.y) < 1e-5);
    double ox = 0, oy = 0;
    for (int i = 0; i < 8; ++i) {
      ox += (r[2][i] - p.mean[i]) * p.basis[0][i];
      oy += (r[2][i] - p.mean[i]) * p.basis[1][i];
    }
    const Point2 q = project(p, r[2]);
    CHECK(q.x == doctest::Approx(ox).epsilon(1e-6));
    CHECK(q.y == doctest::Approx(oy).epsilon(1e-6));
    CHECK_THROWS_AS(project(p, std::vector<float>(7)), Error);
  }
}

TEST_SUITE("dispersion") {
  TEST_CASE("hand-checkable cases") {
    CHECK(dispersion(std::vector<Point2>{}) == 0.0);
    CHECK(dispersion(std::vector<Point2>{{5, 5}}) == 0.0);
    CHECK(dispersion(std::vector<Point2>{{1, 2}, {1, 2}, {1, 2}}) == 0.0);
    CHECK(dispersion(std::vector<Point2>{{0, 0}, {0, 2}}) == doctest::Approx(2.0));
    CHECK(dispersion(std::vector<Point2>{{0, 0}, {3, 0}, {0, 4}}) == doctest::Approx(4.0));
  }

  TEST_CASE("invariances") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0, 2);
    for (int t = 0; t < 100; ++t) {
      std::vector<Point2> pts(2 + t % 10);
      for (auto& p : pts) p = {g(rng), g(rng)};
      const double d = dispersion(pts);
      auto perm = pts;
      std::shuffle(perm.begin(), perm.end(), rng);
      CHECK(dispersion(perm) == doctest::Approx(d));
      const double tx = g(rng), ty = g(rng), s = std::abs(g(rng));
      auto moved = pts, scaled = pts;
      for (auto& p : moved) p = {p.x + tx, p.y + ty};
      for (auto& p : scaled) p = {s * p.x, s * p.y};
      CHECK(dispersion(moved) == doctest::Approx(d));
      CHECK(dispersion(scaled) == doctest::Approx(s * d));
    }
  }

  TEST_CASE("a point beyond the current diameter increases dispersion") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 50; ++t) {
      std::vector<Point2> pts(2 + t % 6);
      for (auto& p : pts) p = {u(rng), u(rng)};
      double diam = 0;
      for (const auto& a : pts) {
        for (const auto& b : pts) diam = std::max(diam, distance(a, b));
      }
      const double before = dispersion(pts);
      // Every existing point lies within sqrt(2) of the origin, so this one is farther than diam from all.
      pts.push_back({diam + 2.0, diam + 2.0});
      CHECK(dispersion(pts) > before);
    }
  }

  TEST_CASE("spread layout scores higher than a tight one") {
    auto cls = [](CategoryId c, double cx, double r) {
      ClassDiversity d;
      d.category = c;
      for (int i = 0; i < 6; ++i) {
        const double a = i * 1.0471975512;
        d.points.push_back({cx + r * std::cos(a), r * std::sin(a)});
        d.sample_ids.push_back(std::to_string(c) + "-" + std::to_string(i));
      }
      return d;
    };
    const DiversityReport tight = summarize_diversity({cls(0, 0, 0.2), cls(1, 5, 0.3)});
    const DiversityReport spread = summarize_diversity({cls(0, 0, 2.0), cls(1, 5, 3.0)});
    CHECK(spread.overall > tight.overall);
    // Count-weighted mean.
    ClassDiversity a = cls(0, 0, 1.0), b = cls(1, 0, 2.0);
    b.points.resize(2);
    b.sample_ids.resize(2);
    const DiversityReport mixed = summarize_diversity({a, b});
    CHECK(mixed.overall == doctest::Approx((6 * dispersion(a.points) + 2 * dispersion(b.points)) / 8));
    CHECK(summarize_diversity({}).overall == 0.0);
  }
}

TEST_SUITE("live point") {
  TEST_CASE("novelty matches a linear scan") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0, 3);
    for (int t = 0; t < 100; ++t) {
      std::vector<Point2> pts(1 + t % 12);
      for (auto& p : pts) p = {g(rng), g(rng)};
      const Point2 q{g(rng), g(rng)};
      double best = 1e18;
      for (const auto& p : pts) best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
      const LivePoint lp = make_live_point(q, 2, pts);
      REQUIRE(lp.novelty.has_value());
      CHECK(*lp.novelty == doctest::Approx(best));
      CHECK(lp.category == 2);
    }
    CHECK_FALSE(make_live_point({1, 1}, 0, {}).novelty.has_value());
  }

  TEST_CASE("engine: unavailable before the first fit, then identical frame has novelty 0") {
    Session session;
    session.add_category({0, "a", {}});
    session.add_category({1, "b", {}});
    DiversityEngine engine([&] { return session.snapshot(); }, false);
    std::mt19937_64 rng(7);
    const Frame f = testing::noise_frame(40, 40, rng);
    try {
      engine.live_point(f, 0);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::conflict);
      CHECK(std::string(e.what()) == "projection unavailable");
    }
    auto frame = std::make_shared<const Frame>(f);
    session.capture(frame, 0, Condition::naive);
    session.capture(std::make_shared<const Frame>(testing::noise_frame(40, 40, rng)), 0, Condition::naive);
    session.capture(std::make_shared<const Frame>(testing::noise_frame(40, 40, rng)), 1, Condition::naive);
    engine.notify_change();
    REQUIRE(engine.served() != nullptr);
    const LivePoint lp = engine.live_point(f, 0);
    REQUIRE(lp.novelty.has_value());
    CHECK(*lp.novelty == doctest::Approx(0.0).epsilon(1e-9));
    CHECK_FALSE(engine.live_point(f, 5).novelty.has_value());

    const DiversityReport r = engine.report();
    REQUIRE(r.per_class.size() == 2);
    std::size_t total = 0;
    for (const auto& c : r.per_class) total += c.points.size();
    CHECK(total == 3);
  }

  TEST_CASE("random projection embedder is deterministic per seed") {
    std::mt19937_64 rng(8);
    const Frame f = testing::noise_frame(50, 30, rng);
    RandomProjectionEmbedder a(1), b(1), c(2);
    CHECK(a.embed(f) == b.embed(f));
    CHECK(a.embed(f).size() == 64);
    CHECK(a.id() == b.id());
    CHECK(a.id() != c.id());
    CHECK(a.embed(f) != c.embed(f));
  }
}

TEST_SUITE("refit policy") {
  TEST_CASE("coordinator coalesces requests") {
    RefitCoordinator c;
    CHECK(c.request());
    CHECK_FALSE(c.request());
    CHECK(c.pending() == 1);
    CHECK(c.begin());
    CHECK(c.running());
    CHECK(c.pending() == 0);
    CHECK(c.request());  // a new change during a running refit schedules exactly one more
    CHECK_FALSE(c.request());
    c.finish();
    CHECK(c.begin());
    c.finish();
    CHECK_FALSE(c.begin());
    CHECK(c.completed() == 2);
  }

  TEST_CASE("async engine serves only complete fits under concurrent captures") {
    Session session;
    session.add_category({0, "a", {}});
    DiversityEngine engine([&] { return session.snapshot(); }, true);
    std::mt19937_64 rng(9);
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::thread reader([&] {
      while (!done) {
        if (auto s = engine.served()) {
          const auto& p = s->projection;
          if (p.basis[0].size() != p.dim() || p.basis[1].size() != p.dim() || p.fitted_on == 0) ++bad;
        }
      }
    });
    int refits_requested = 0;
    for (int i = 0; i < 25; ++i) {
      session.capture(std::make_shared<const Frame>(testing::noise_frame(32, 32, rng)), 0, Condition::naive);
      refits_requested += engine.notify_change();
    }
    engine.wait_idle();
    done = true;
    reader.join();
    CHECK(bad == 0);
    CHECK(engine.coordinator().pending() == 0);
    CHECK(engine.coordinator().completed() >= 1);
    CHECK(engine.coordinator().completed() <= static_cast<std::uint64_t>(refits_requested));
    CHECK(engine.served()->projection.fitted_on == 25);
  }
}

#include <doctest.h>

#include <cmath>
#include <set>

#include "chunkdec/chunk_mask.hpp"

using namespace chunkdec;

namespace {

std::set<std::size_t> permitted_keys(const ChunkMask& m, std::size_t q) {
  std::set<std::size_t> s;
  for (std::size_t k = 0; k < m.total_frames; ++k)
    if (m.permitted(q, k)) s.insert(k);
  return s;
}

// Independent enumeration of the mask definition.
bool oracle_permits(std::size_t q, std::size_t k, std::size_t chunk, PastSize past) {
  const std::size_t start = q / chunk * chunk;
  const std::size_t end = start + chunk;
  if (k >= end) return false;
  if (k >= start) return true;
  return past.is_all() || start - k <= past.value();
}

}  // namespace

TEST_CASE("static mask enumerated examples") {
  auto m = build_static_mask(4, 2, PastSize::frames(1));
  CHECK(permitted_keys(m, 0) == std::set<std::size_t>{0, 1});
  CHECK(permitted_keys(m, 1) == std::set<std::size_t>{0, 1});
  CHECK(permitted_keys(m, 2) == std::set<std::size_t>{1, 2, 3});
  CHECK(permitted_keys(m, 3) == std::set<std::size_t>{1, 2, 3});

  auto one = build_static_mask(3, 5, PastSize::frames(0));
  for (std::size_t q = 0; q < 3; ++q) CHECK(permitted_keys(one, q).size() == 3);

  auto all = build_static_mask(6, 2, PastSize::all());
  CHECK(permitted_keys(all, 5) == std::set<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK(permitted_keys(all, 1) == std::set<std::size_t>{0, 1});
}

TEST_CASE("static mask errors") {
  CHECK_THROWS(build_static_mask(4, 0, PastSize::frames(1)));
  CHECK_THROWS(build_static_mask(0, 2, PastSize::frames(1)));
}

TEST_CASE("static mask matches the definition over a grid") {
  for (std::size_t T : {1, 5, 13, 30})
    for (std::size_t c : {1, 3, 4, 30})
      for (PastSize p : {PastSize::frames(0), PastSize::frames(1), PastSize::frames(5),
                         PastSize::frames(40), PastSize::all()}) {
        auto m = build_static_mask(T, c, p);
        REQUIRE(m.permitted.rows == T);
        for (std::size_t q = 0; q < T; ++q) {
          bool any = false;
          for (std::size_t k = 0; k < T; ++k) {
            CHECK(m.permitted(q, k) == oracle_permits(q, k, c, p));
            any = any || m.permitted(q, k);
            if (m.permitted(q, k)) CHECK(k < (q / c + 1) * c);
          }
          CHECK(any);
          // rows within a chunk are identical
          const std::size_t first = q / c * c;
          for (std::size_t k = 0; k < T; ++k) CHECK(m.permitted(q, k) == m.permitted(first, k));
        }
      }
}

TEST_CASE("increasing past only adds entries") {
  const std::size_t T = 20, c = 4;
  for (std::size_t p = 0; p < 25; ++p) {
    auto a = build_static_mask(T, c, PastSize::frames(p));
    auto b = build_static_mask(T, c, PastSize::frames(p + 1));
    for (std::size_t i = 0; i < a.permitted.bits.size(); ++i)
      if (a.permitted.bits[i]) CHECK(b.permitted.bits[i]);
  }
  auto zero = build_static_mask(T, c, PastSize::frames(0));
  for (std::size_t q = 0; q < T; ++q)
    for (std::size_t k = 0; k < T; ++k) CHECK(zero.permitted(q, k) == (q / c == k / c));
}

TEST_CASE("dynamic mask draws") {
  DynamicMaskPolicy degenerate{3, 3, {1.0}};
  std::mt19937_64 rng(5);
  auto m = sample_dynamic_mask(11, degenerate, rng);
  CHECK(m.permitted == build_static_mask(11, 3, PastSize::frames(3)).permitted);

  DynamicMaskPolicy quarter{30, 30, {0.25}};
  CHECK(draw_mask_sizes(quarter, rng).past == PastSize::frames(7));

  DynamicMaskPolicy all_only{4, 4, {std::nullopt}};
  CHECK(draw_mask_sizes(all_only, rng).past.is_all());

  std::mt19937_64 r1(9), r2(9);
  DynamicMaskPolicy def;
  for (int i = 0; i < 20; ++i) {
    auto a = draw_mask_sizes(def, r1), b = draw_mask_sizes(def, r2);
    CHECK(a.chunk_size == b.chunk_size);
    CHECK(a.past == b.past);
  }

  CHECK_THROWS(DynamicMaskPolicy{0, 5, {0.0}}.validate());
  CHECK_THROWS(DynamicMaskPolicy{6, 5, {0.0}}.validate());
  CHECK_THROWS(DynamicMaskPolicy{1, 5, {}}.validate());
}

TEST_CASE("dynamic chunk sizes are uniform (chi-square)") {
  DynamicMaskPolicy policy;
  std::mt19937_64 rng(2024);
  const std::size_t n = 10000, bins = policy.chunk_max - policy.chunk_min + 1;
  std::vector<double> hist(bins, 0.0);
  std::vector<double> mult_hist(policy.past_multipliers.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto d = draw_mask_sizes(policy, rng);
    REQUIRE(d.chunk_size >= policy.chunk_min);
    REQUIRE(d.chunk_size <= policy.chunk_max);
    hist[d.chunk_size - policy.chunk_min] += 1;
  }
  const double expected = double(n) / double(bins);
  double chi2 = 0;
  for (auto h : hist) chi2 += (h - expected) * (h - expected) / expected;
  const double dof = double(bins - 1);
  CHECK(chi2 <= dof + 3.0 * std::sqrt(2.0 * dof));
}

TEST_CASE("mask rendering") {
  auto m = build_static_mask(4, 2, PastSize::frames(1));
  CHECK(mask_to_ascii(m) == "##..\n##..\n.###\n.###\n");
  const std::string pgm = mask_to_pgm(m);
  const std::string header = "P5\n4 4\n255\n";
  REQUIRE(pgm.size() == header.size() + 16);
  CHECK(pgm.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(pgm[header.size()]) == 0);        // permitted
  CHECK(static_cast<unsigned char>(pgm[header.size() + 2]) == 255);  // masked
}

TEST_CASE("PastSize parsing") {
  CHECK(PastSize::parse("all").is_all());
  CHECK(PastSize::parse("15") == PastSize::frames(15));
  CHECK_THROWS(PastSize::parse("-1"));
  CHECK_THROWS(PastSize::parse("abc"));
  CHECK_THROWS(PastSize::parse("3x"));
}

#include <doctest.h>

#include <random>

#include <Eigen/Eigenvalues>

#include "heteroseg/anatomy_graph.hpp"

using namespace heteroseg;

TEST_CASE("build_layout computes cumulative offsets") {
  auto layout = build_layout({{"L", 3}, {"H", 2}, {"C", 2}});
  CHECK(layout.total_nodes() == 7);
  CHECK(layout.range(Structure::kLungs) == std::pair{0, 3});
  CHECK(layout.range(Structure::kHeart) == std::pair{3, 5});
  CHECK(layout.range(Structure::kClavicles) == std::pair{5, 7});
  CHECK(layout.structure_of(4) == Structure::kHeart);
}

TEST_CASE("build_layout single block and canonical reordering") {
  auto lungs = build_layout({{"LUNGS", 94}});
  CHECK(lungs.total_nodes() == 94);
  CHECK(lungs.blocks().size() == 1);

  auto reordered = build_layout({{"H", 2}, {"L", 3}});
  REQUIRE(reordered.blocks().size() == 2);
  CHECK(reordered.blocks()[0].structure == Structure::kLungs);
  CHECK(reordered.blocks()[1].structure == Structure::kHeart);
  CHECK(reordered.range(Structure::kHeart) == std::pair{3, 5});
}

TEST_CASE("build_layout rejects bad input") {
  CHECK_THROWS(build_layout({{"L", 0}}));
  CHECK_THROWS(build_layout({{"L", -2}}));
  CHECK_THROWS(build_layout({{"SPLEEN", 3}}));
  CHECK_THROWS(build_layout({{"L", 3}, {"C", 2}}));  // not a prefix
  CHECK_THROWS(build_layout({{"L", 3}, {"L", 2}}));
}

TEST_CASE("availability_mask") {
  auto layout = build_layout({{"L", 3}, {"H", 2}, {"C", 2}});
  using V = std::vector<bool>;
  CHECK(availability_mask(layout, {Structure::kLungs, Structure::kHeart}) == V{1, 1, 1, 1, 1, 0, 0});
  CHECK(availability_mask(layout, LabelAvailability::all()) == V(7, true));
  CHECK(availability_mask(layout, {Structure::kLungs, Structure::kClavicles}) == V{1, 1, 1, 0, 0, 1, 1});

  auto lungs_only = build_layout({{"L", 3}});
  CHECK_THROWS(availability_mask(lungs_only, {Structure::kHeart}));
}

TEST_CASE("availability_mask union and prefix properties over random layouts") {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> count(1, 12);
  std::uniform_int_distribution<int> subset(0, 7);
  for (int trial = 0; trial < 200; ++trial) {
    auto layout = build_layout({{"L", count(rng)}, {"H", count(rng)}, {"C", count(rng)}});
    auto make = [&](int bits) {
      LabelAvailability a;
      for (int k = 0; k < 3; ++k)
        if (bits & (1 << k)) a.insert(kAllStructures[k]);
      return a;
    };
    auto a1 = make(subset(rng)), a2 = make(subset(rng));
    auto m1 = availability_mask(layout, a1), m2 = availability_mask(layout, a2);
    auto mu = availability_mask(layout, a1 | a2);
    for (int i = 0; i < layout.total_nodes(); ++i) CHECK(mu[i] == (m1[i] || m2[i]));

    const int dl = layout.block(Structure::kLungs).node_count;
    const int dh = layout.block(Structure::kHeart).node_count;
    auto pl = availability_mask(layout, {Structure::kLungs});
    auto plh = availability_mask(layout, {Structure::kLungs, Structure::kHeart});
    for (int i = 0; i < layout.total_nodes(); ++i) {
      CHECK(pl[i] == (i < dl));
      CHECK(plh[i] == (i < dl + dh));
    }
  }
}

namespace {

std::shared_ptr<const StructureLayout> shared(StructureLayout l) {
  return std::make_shared<const StructureLayout>(std::move(l));
}

}  // namespace

TEST_CASE("contour adjacency of a 4-cycle") {
  auto layout = shared(build_layout({{"L", 4}}));
  auto topo = build_contour_adjacency(layout, {{Structure::kLungs, {{0, 1, 2, 3}}}});
  const auto& a = topo.adjacency();
  CHECK((a.array() != 0).count() == 8);
  CHECK(a.isApprox(a.transpose()));
  CHECK(a.diagonal().isZero());
}

TEST_CASE("two disjoint cycles give block-diagonal adjacency") {
  auto layout = shared(build_layout({{"L", 3}, {"H", 4}}));
  auto topo = build_contour_adjacency(layout, {{Structure::kLungs, {{0, 1, 2}}}, {Structure::kHeart, {{3, 4, 5, 6}}}});
  const auto& a = topo.adjacency();
  CHECK(a.block(0, 3, 3, 4).isZero());
  CHECK(a.block(3, 0, 4, 3).isZero());
  CHECK(a.block(0, 0, 3, 3).sum() == 6);
  CHECK(a.block(3, 3, 4, 4).sum() == 8);
}

TEST_CASE("scaled laplacian of a 3-cycle") {
  // Normalized Laplacian of a triangle is I - A/2 with spectrum {0, 1.5, 1.5};
  // rescaling by 2/1.5 and shifting by -I gives {-1, 1, 1}.
  auto layout = shared(build_layout({{"L", 3}}));
  auto topo = build_contour_adjacency(layout, {{Structure::kLungs, {{0, 1, 2}}}});
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(topo.scaled_laplacian());
  auto ev = solver.eigenvalues();
  CHECK(ev(0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(ev(1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ev(2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("contour adjacency rejects invalid polylines") {
  auto layout = shared(build_layout({{"L", 3}, {"H", 3}}));
  CHECK_THROWS(build_contour_adjacency(layout, {{Structure::kLungs, {{0, 1, 3}}}, {Structure::kHeart, {{2, 4, 5}}}}));
  auto small = shared(build_layout({{"L", 2}}));
  CHECK_THROWS(build_contour_adjacency(small, {{Structure::kLungs, {{0, 1}}}}));
}

TEST_CASE("random topologies are symmetric with degree two") {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> count(3, 9);
  std::bernoulli_distribution split(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<std::string, int>> counts;
    PolylineSpec lines;
    int offset = 0;
    for (Structure s : kAllStructures) {
      int first = count(rng);
      bool two = split(rng);
      int second = two ? count(rng) : 0;
      std::vector<int> a(first), b(second);
      std::iota(a.begin(), a.end(), offset);
      std::iota(b.begin(), b.end(), offset + first);
      lines[s] = {a};
      if (two) lines[s].push_back(b);
      counts.emplace_back(std::string(to_string(s)), first + second);
      offset += first + second;
    }
    auto topo = build_contour_adjacency(shared(build_layout(counts)), lines);
    const auto& adj = topo.adjacency();
    CHECK(adj.isApprox(adj.transpose()));
    CHECK(adj.diagonal().isZero());
    for (int i = 0; i < adj.rows(); ++i) CHECK(adj.row(i).sum() == 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(topo.scaled_laplacian());
    CHECK(solver.eigenvalues().minCoeff() >= -1.0 - 1e-9);
    CHECK(solver.eigenvalues().maxCoeff() <= 1.0 + 1e-9);
  }
}

TEST_CASE("topology json round trip and truncation") {
  auto topo = default_synthetic_topology();
  CHECK(topo.layout()->total_nodes() == 76);
  auto back = topology_from_json(topology_to_json(topo));
  CHECK(*back.layout() == *topo.layout());
  CHECK(back.adjacency() == topo.adjacency());

  auto lh = truncate_topology(topo, {Structure::kLungs, Structure::kHeart});
  CHECK(lh.layout()->total_nodes() == 60);
  CHECK(lh.adjacency() == topo.adjacency().topLeftCorner(60, 60));
}

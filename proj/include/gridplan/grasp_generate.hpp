#pragma once

// Seeded GRASP instance generation over a parameter lattice.

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "gridplan/grasp_env.hpp"

namespace gridplan {

struct GraspGridSpec {
  int width = 11;
  int height = 11;
  int energy_tokens = 40;
  double obstacle_fraction = 0.10;  // of non-start cells
  bool exclude_start = true;        // keep the start cell free of energy
  double spiral_spacing = 2.0;      // cells between spiral arms
  double cluster_sigma = 1.5;
};

struct GraspLattice {
  std::string name = "default";
  std::vector<EnergyDistribution> distributions{kAllDistributions.begin(), kAllDistributions.end()};
  std::vector<bool> obstacles = {true, false};
  std::vector<bool> diagonals = {false, true};
  std::vector<double> costs = {0.0, 0.3};
  std::vector<int> carry_limits = {2, kUnlimitedCarry};
  int seeds = 200;  // instances per lattice cell
  int max_actions = 20;
  CostBasis cost_basis = CostBasis::PerAction;
  GraspGridSpec grid;

  std::size_t size() const {
    return distributions.size() * obstacles.size() * diagonals.size() * costs.size() * carry_limits.size() *
           static_cast<std::size_t>(std::max(seeds, 0));
  }
};

// 5 x 2 x 2 x 2 x 2 x 200 = 16,000 instances.
inline GraspLattice grasp_lattice_default() { return {}; }

// The 100-instance baseline setting: cost 0.3, carry 2, 8 directions,
// 20 actions, all distributions with and without obstacles.
inline GraspLattice grasp_lattice_eval100() {
  GraspLattice l;
  l.name = "eval100";
  l.diagonals = {true};
  l.costs = {0.3};
  l.carry_limits = {2};
  l.seeds = 10;
  return l;
}

inline GraspLattice grasp_lattice_by_name(const std::string& name) {
  if (name == "default") return grasp_lattice_default();
  if (name == "eval100") return grasp_lattice_eval100();
  throw LatticeError("unknown lattice '" + name + "' (expected default or eval100)");
}

namespace detail {

inline std::vector<Pos> sample_uniform(std::vector<Pos> cells, std::size_t n, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) std::swap(cells[i], cells[i + rng.below(cells.size() - i)]);
  cells.resize(n);
  return cells;
}

inline std::vector<Pos> sample_weighted(std::vector<Pos> cells, std::vector<double> weights, std::size_t n, Rng& rng) {
  std::vector<Pos> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = rng.unit() * total;
    std::size_t pick = cells.size() - 1;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (u < weights[i]) {
        pick = i;
        break;
      }
      u -= weights[i];
    }
    out.push_back(cells[pick]);
    cells.erase(cells.begin() + static_cast<std::ptrdiff_t>(pick));
    weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

}  // namespace detail

// Cells visited by r = spacing * theta / (2 pi) from the grid center, in
// order of first visit. `quarter` in [0,4) rotates the start by 90 degrees,
// `clockwise` flips the winding.
inline std::vector<Pos> spiral_cells(int width, int height, int quarter, bool clockwise, double spacing) {
  const double cr = (height - 1) / 2.0;
  const double cc = (width - 1) / 2.0;
  const double r_max = std::hypot(height, width);
  const double phase = quarter * std::numbers::pi / 2.0;
  const double sign = clockwise ? -1.0 : 1.0;
  std::vector<Pos> out;
  std::set<Pos> seen;
  for (double theta = 0.0;; theta += 0.02) {
    const double r = spacing * theta / (2.0 * std::numbers::pi);
    if (r > r_max) break;
    const double a = phase + sign * theta;
    const Pos p{static_cast<int>(std::lround(cr + r * std::sin(a))), static_cast<int>(std::lround(cc + r * std::cos(a)))};
    if (p.row < 0 || p.col < 0 || p.row >= height || p.col >= width) continue;
    if (seen.insert(p).second) out.push_back(p);
  }
  return out;
}

// One grid: start, energy (one token per cell) and obstacles. Parameters
// other than the layout are left at their defaults.
inline GraspInstance grasp_make_layout(EnergyDistribution dist, bool with_obstacles, const GraspGridSpec& spec,
                                       std::uint64_t seed) {
  if (spec.width < 1 || spec.height < 1 || spec.width > kMaxGridSide || spec.height > kMaxGridSide)
    throw LatticeError("grid dimensions out of range");
  Rng rng(seed);
  GraspInstance inst;
  inst.width = spec.width;
  inst.height = spec.height;
  inst.distribution = dist;
  inst.seed = seed;
  inst.start = {static_cast<int>(rng.below(static_cast<std::size_t>(spec.height))),
                static_cast<int>(rng.below(static_cast<std::size_t>(spec.width)))};

  std::vector<Pos> eligible;
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c)
      if (!(spec.exclude_start && Pos{r, c} == inst.start)) eligible.push_back({r, c});
  const auto n = static_cast<std::size_t>(std::max(spec.energy_tokens, 0));
  if (n > eligible.size())
    throw LatticeError(std::to_string(n) + " energy tokens do not fit in " + std::to_string(eligible.size()) +
                       " eligible cells");

  std::vector<Pos> chosen;
  switch (dist) {
    case EnergyDistribution::Random: chosen = detail::sample_uniform(eligible, n, rng); break;
    case EnergyDistribution::VSkewed:
    case EnergyDistribution::HSkewed: {
      const bool flip = rng.below(2) == 1;
      const int extent = dist == EnergyDistribution::VSkewed ? spec.width : spec.height;
      std::vector<double> w;
      for (auto p : eligible) {
        int k = dist == EnergyDistribution::VSkewed ? p.col : p.row;
        if (flip) k = extent - 1 - k;
        w.push_back(static_cast<double>((k + 1) * (k + 1)));
      }
      chosen = detail::sample_weighted(eligible, std::move(w), n, rng);
      break;
    }
    case EnergyDistribution::Cluster: {
      const std::size_t centers_n = 1 + rng.below(3);
      std::vector<Pos> centers;
      for (std::size_t i = 0; i < centers_n; ++i)
        centers.push_back({static_cast<int>(rng.below(static_cast<std::size_t>(spec.height))),
                           static_cast<int>(rng.below(static_cast<std::size_t>(spec.width)))});
      const double two_s2 = 2.0 * spec.cluster_sigma * spec.cluster_sigma;
      std::vector<double> w;
      for (auto p : eligible) {
        double s = 1e-9;
        for (auto c : centers) {
          const double dr = p.row - c.row, dc = p.col - c.col;
          s += std::exp(-(dr * dr + dc * dc) / two_s2);
        }
        w.push_back(s);
      }
      chosen = detail::sample_weighted(eligible, std::move(w), n, rng);
      break;
    }
    case EnergyDistribution::Spiral: {
      const int quarter = static_cast<int>(rng.below(4));
      const bool clockwise = rng.below(2) == 1;
      for (auto p : spiral_cells(spec.width, spec.height, quarter, clockwise, spec.spiral_spacing)) {
        if (chosen.size() == n) break;
        if (spec.exclude_start && p == inst.start) continue;
        chosen.push_back(p);
      }
      if (chosen.size() < n)
        throw LatticeError("spiral holds only " + std::to_string(chosen.size()) + " cells, " + std::to_string(n) +
                           " requested");
      break;
    }
  }
  for (auto p : chosen) inst.energy[p] = 1;

  if (with_obstacles) {
    const auto want = static_cast<std::size_t>(std::lround(spec.obstacle_fraction * (spec.width * spec.height - 1)));
    std::vector<Pos> empty;
    for (int r = 0; r < spec.height; ++r)
      for (int c = 0; c < spec.width; ++c) {
        const Pos p{r, c};
        if (p != inst.start && !inst.energy.count(p)) empty.push_back(p);
      }
    if (want > empty.size()) throw LatticeError("obstacles do not fit in the remaining empty cells");
    inst.obstacles = detail::sample_uniform(std::move(empty), want, rng);
    std::sort(inst.obstacles.begin(), inst.obstacles.end());
  }
  return inst;
}

inline std::string grasp_instance_id(EnergyDistribution dist, bool obstacles, bool diagonals, double cost,
                                     int carry, int seed_index) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%03d", seed_index);
  return std::string(to_string(dist)) + (obstacles ? "-obs" : "-free") + (diagonals ? "-d8" : "-d4") + "-c" +
         format_decimal(cost) + "-k" + (carry == kUnlimitedCarry ? std::string("inf") : std::to_string(carry)) +
         "-" + idx;
}

// Deterministic in (lattice, seed). The layout depends only on distribution,
// obstacle flag and seed index, so instances that differ in movement, cost
// or carry share the same grid.
inline std::vector<GraspInstance> grasp_generate(const GraspLattice& lattice, std::uint64_t seed) {
  if (lattice.size() == 0) throw LatticeError("lattice has an empty dimension");
  std::vector<GraspInstance> out;
  out.reserve(lattice.size());
  for (std::size_t di = 0; di < lattice.distributions.size(); ++di) {
    const auto dist = lattice.distributions[di];
    for (bool obs : lattice.obstacles) {
      for (int s = 0; s < lattice.seeds; ++s) {
        const std::uint64_t layout_seed =
            mix_seed(seed, (static_cast<std::uint64_t>(dist) << 40) ^ (static_cast<std::uint64_t>(obs) << 32) ^
                               static_cast<std::uint64_t>(s));
        const GraspInstance layout = grasp_make_layout(dist, obs, lattice.grid, layout_seed);
        for (bool diag : lattice.diagonals)
          for (double cost : lattice.costs)
            for (int carry : lattice.carry_limits) {
              GraspInstance inst = layout;
              inst.id = grasp_instance_id(dist, obs, diag, cost, carry, s);
              inst.diagonals_allowed = diag;
              inst.cost_per_step = cost;
              inst.carry_limit = carry;
              inst.max_actions = lattice.max_actions;
              inst.cost_basis = lattice.cost_basis;
              inst.validate();
              out.push_back(std::move(inst));
            }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

}  // namespace gridplan

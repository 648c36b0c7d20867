#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xvmunet/params.hpp"
#include "xvmunet/ssm.hpp"

namespace xvmunet::vss {

// The four SS2D traversals of an H x W map.
enum class Direction : std::size_t {
  RowMajor = 0,
  ColMajor = 1,
  RowMajorReversed = 2,
  ColMajorReversed = 3,
};

inline constexpr std::array<Direction, 4> kDirections = {Direction::RowMajor, Direction::ColMajor,
                                                         Direction::RowMajorReversed, Direction::ColMajorReversed};

// order[i] is the row-major flat index visited at step i.
std::vector<std::size_t> scan_order(Direction dir, std::size_t height, std::size_t width);
std::vector<std::size_t> inverse_order(std::span<const std::size_t> order);

struct DirectionalSequences {
  std::size_t height = 0;
  std::size_t width = 0;
  std::array<Tensor, 4> seqs;  // each [C, H*W], indexed by Direction
};

// f: [C, H, W]
DirectionalSequences scan_expand(const Tensor& f);
// Inverse-reorders each direction back to [C, H, W] and sums them pairwise:
// (row + col) + (row reversed + col reversed).
Tensor scan_merge(const DirectionalSequences& seqs);

// What runs on each directional sequence inside SS2D.
enum class ScanCore { Selective, Identity };

struct VSSConfig {
  std::size_t channels = 0;
  std::size_t d_state = 8;
  std::size_t expand = 2;
  // One set of selective projections for all directions instead of one per direction.
  bool share_projections = false;
  ScanCore core = ScanCore::Selective;
  ssm::Discretization discretization = ssm::Discretization::ExactZoh;

  std::size_t inner() const { return channels * expand; }
};

void init_vss_block(ParamStore& store, const std::string& prefix, const VSSConfig& cfg, std::uint64_t seed);

// x: [H*W, E] in row-major pixel order -> [H*W, E].
Var ss2d(const Scope& scope, const VSSConfig& cfg, const Var& x, std::size_t height, std::size_t width);

// x: [H, W, C] -> [H, W, C]
//   out = x + W_out(LN_post(SS2D(SiLU(DWConv(W_2 LN(x))))) * SiLU(W_1 LN(x)))
Var vss_block(const Scope& scope, const VSSConfig& cfg, const Var& x);

}  // namespace xvmunet::vss

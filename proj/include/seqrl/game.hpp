#pragma once

// The symbol-filling game: a K x N sequence set is filled with +1/-1 symbols,
// `ell` cells per move, in row-major order. Cells past N*K exist only to make
// the last move full width and are dropped when the set is read out.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "seqrl/rng.hpp"

namespace seqrl {

using Symbol = std::int8_t;

struct GameConfig {
  int K = 1;    // sequence count
  int N = 1;    // sequence length
  int ell = 1;  // symbols filled per move

  int cells() const { return K * N; }
  int steps() const { return (cells() + ell - 1) / ell; }
  int padded_len() const { return steps() * ell; }
  int move_count() const { return 1 << ell; }

  void validate() const {
    if (K < 1 || N < 1) throw std::invalid_argument("game: K and N must be positive");
    if (ell < 1 || ell > cells())
      throw std::invalid_argument("game: ell must satisfy 1 <= ell <= N*K, got " +
                                  std::to_string(ell));
    if (ell > 20) throw std::invalid_argument("game: ell > 20 is not supported");
  }

  friend bool operator==(const GameConfig&, const GameConfig&) = default;
};

struct Move {
  std::uint32_t code = 0;
  friend bool operator==(const Move&, const Move&) = default;
};

// Bit b of the code (b = 0 is the most significant of the ell bits) fills the
// b-th cell of the block; a set bit means +1.
inline Symbol move_symbol(Move m, int ell, int b) {
  return ((m.code >> (ell - 1 - b)) & 1U) ? Symbol{1} : Symbol{-1};
}

class GameState {
 public:
  GameState() = default;

  const GameConfig& config() const { return cfg_; }
  int t() const { return t_; }
  std::span<const Symbol> cells() const { return cells_; }
  bool terminal() const { return t_ == cfg_.steps(); }

  friend bool operator==(const GameState& a, const GameState& b) {
    return a.t_ == b.t_ && a.cfg_ == b.cfg_ && a.cells_ == b.cells_;
  }

  friend GameState initial_state(const GameConfig& cfg);
  friend GameState apply_move(const GameState& s, Move m);
  // Reconstructs a state from raw cells; validates the prefix invariant.
  static GameState from_cells(const GameConfig& cfg, std::vector<Symbol> cells) {
    cfg.validate();
    if (static_cast<int>(cells.size()) != cfg.padded_len())
      throw std::invalid_argument("game: expected " + std::to_string(cfg.padded_len()) +
                                  " cells");
    int filled = 0;
    while (filled < static_cast<int>(cells.size()) && cells[filled] != 0) ++filled;
    for (std::size_t i = filled; i < cells.size(); ++i)
      if (cells[i] != 0) throw std::invalid_argument("game: cells must be filled left to right");
    for (Symbol c : cells)
      if (c != 0 && c != 1 && c != -1) throw std::invalid_argument("game: symbol out of range");
    if (filled % cfg.ell != 0)
      throw std::invalid_argument("game: filled prefix is not a whole number of moves");
    GameState s;
    s.cfg_ = cfg;
    s.cells_ = std::move(cells);
    s.t_ = filled / cfg.ell;
    return s;
  }

 private:
  GameConfig cfg_;
  std::vector<Symbol> cells_;
  int t_ = 0;
};

inline GameState initial_state(const GameConfig& cfg) {
  cfg.validate();
  GameState s;
  s.cfg_ = cfg;
  s.cells_.assign(cfg.padded_len(), 0);
  s.t_ = 0;
  return s;
}

inline GameState apply_move(const GameState& s, Move m) {
  if (s.terminal()) throw std::logic_error("game: move applied to terminal state");
  const int ell = s.cfg_.ell;
  if (m.code >= (1U << ell)) throw std::invalid_argument("game: move code out of range");
  GameState next = s;
  const int base = s.t_ * ell;
  for (int b = 0; b < ell; ++b) next.cells_[base + b] = move_symbol(m, ell, b);
  ++next.t_;
  return next;
}

inline std::vector<Move> legal_moves(const GameState& s) {
  if (s.terminal()) throw std::logic_error("game: no legal moves in terminal state");
  std::vector<Move> moves(s.config().move_count());
  for (std::size_t i = 0; i < moves.size(); ++i) moves[i].code = static_cast<std::uint32_t>(i);
  return moves;
}

// A completed K x N matrix over {+1, -1}, row-major.
class SequenceSet {
 public:
  SequenceSet() = default;
  SequenceSet(int rows, int cols, std::vector<Symbol> entries)
      : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("sequence set: empty shape");
    if (static_cast<int>(entries_.size()) != rows * cols)
      throw std::invalid_argument("sequence set: entry count does not match shape");
    for (Symbol e : entries_)
      if (e != 1 && e != -1) throw std::invalid_argument("sequence set: entries must be +1/-1");
  }
  static SequenceSet filled(int rows, int cols, Symbol v) {
    return SequenceSet(rows, cols, std::vector<Symbol>(static_cast<std::size_t>(rows) * cols, v));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Symbol at(int r, int c) const { return entries_[static_cast<std::size_t>(r) * cols_ + c]; }
  std::span<const Symbol> row(int r) const {
    return std::span<const Symbol>(entries_).subspan(static_cast<std::size_t>(r) * cols_, cols_);
  }
  std::span<const Symbol> entries() const { return entries_; }

  friend bool operator==(const SequenceSet&, const SequenceSet&) = default;
  friend auto operator<=>(const SequenceSet& a, const SequenceSet& b) {
    return a.entries_ <=> b.entries_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Symbol> entries_;
};

inline SequenceSet to_sequence_set(const GameState& s) {
  if (!s.terminal()) throw std::logic_error("game: state is not terminal");
  const auto& cfg = s.config();
  std::vector<Symbol> e(s.cells().begin(), s.cells().begin() + cfg.cells());
  return SequenceSet(cfg.K, cfg.N, std::move(e));
}

// --- Features -------------------------------------------------------------

struct FeatureSpec {
  int rows = 0;  // Kp
  int cols = 0;  // Np

  static FeatureSpec default_for(const GameConfig& cfg) { return {cfg.ell, cfg.steps()}; }
  int pixels() const { return rows * cols; }
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

// Three binary planes laid out [plane][row][col]: +1 cells, -1 cells, 0 cells.
struct FeatureImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  static constexpr int kPlanes = 3;
  double at(int plane, int r, int c) const {
    return data[(static_cast<std::size_t>(plane) * rows + r) * cols + c];
  }
};

// Cells fill the image row-major, so a Kp x Np = K x N spec reproduces the
// sequence-set layout itself. Pixels past the padded state read as 0.
inline FeatureImage encode_features(const GameState& s, const FeatureSpec& spec) {
  if (spec.rows < 1 || spec.cols < 1 ||
      spec.pixels() < static_cast<int>(s.cells().size()))
    throw std::invalid_argument("features: image smaller than the padded state");
  FeatureImage img{spec.rows, spec.cols,
                   std::vector<double>(static_cast<std::size_t>(3) * spec.pixels(), 0.0)};
  const auto cells = s.cells();
  const std::size_t plane = spec.pixels();
  for (int p = 0; p < spec.pixels(); ++p) {
    const Symbol v = p < static_cast<int>(cells.size()) ? cells[p] : Symbol{0};
    const int idx = v == 1 ? 0 : (v == -1 ? 1 : 2);
    img.data[idx * plane + p] = 1.0;
  }
  return img;
}

// --- Counting and hashing -------------------------------------------------

using BigInt = boost::multiprecision::cpp_int;

// Number of distinct states reachable in the game tree: 2^(t*ell) at the start
// of each step t = 0..steps.
inline BigInt state_space_size(const GameConfig& cfg) {
  cfg.validate();
  BigInt total = 0;
  for (int t = 0; t <= cfg.steps(); ++t) total += BigInt(1) << (t * cfg.ell);
  return total;
}

inline std::uint64_t to_u64_checked(const BigInt& v) {
  if (v > BigInt(UINT64_MAX)) throw std::overflow_error("value exceeds 64 bits");
  return static_cast<std::uint64_t>(v);
}

inline constexpr std::uint64_t kKeyEncodingVersion = 1;

// 2 bits per cell (0 -> 00, +1 -> 01, -1 -> 10), packed 32 cells per word and
// folded through splitmix64 together with t and the encoding version.
inline std::uint64_t canonical_key(const GameState& s) {
  std::uint64_t h = splitmix64(kKeyEncodingVersion ^ (static_cast<std::uint64_t>(s.t()) << 32) ^
                               static_cast<std::uint64_t>(s.cells().size()));
  std::uint64_t word = 0;
  int fill = 0;
  for (Symbol c : s.cells()) {
    const std::uint64_t bits = c == 1 ? 1U : (c == -1 ? 2U : 0U);
    word |= bits << (2 * fill);
    if (++fill == 32) {
      h = splitmix64(h ^ word);
      word = 0;
      fill = 0;
    }
  }
  if (fill > 0) h = splitmix64(h ^ word);
  return h;
}

// --- Isomorphs ----------------------------------------------------------------

// Equivalent layouts of a 2-user, 2-codes-per-user set (rows a1, a2, b1, b2):
// 4 row switchings composed with 8 sign patterns. Duplicates are removed, so a
// symmetric input yields fewer than 32 sets.
inline std::vector<SequenceSet> enumerate_isomorphs(const SequenceSet& set) {
  if (set.rows() != 4) throw std::invalid_argument("isomorphs: expected 4 rows (a1, a2, b1, b2)");
  static constexpr std::array<std::array<int, 4>, 4> kPerms{{
      {0, 1, 2, 3},  // a1 a2 b1 b2
      {2, 3, 0, 1},  // b1 b2 a1 a2
      {1, 0, 3, 2},  // a2 a1 b2 b1
      {3, 2, 1, 0},  // b2 b1 a2 a1
  }};
  static constexpr std::array<std::array<int, 4>, 8> kSigns{{
      {+1, +1, +1, +1},
      {-1, -1, +1, +1},
      {+1, +1, -1, -1},
      {-1, +1, -1, +1},
      {+1, -1, +1, -1},
      {+1, -1, -1, +1},
      {-1, +1, +1, -1},
      {-1, -1, -1, -1},
  }};
  const int n = set.cols();
  std::vector<SequenceSet> out;
  out.reserve(32);
  for (const auto& perm : kPerms) {
    for (const auto& sign : kSigns) {
      std::vector<Symbol> e(static_cast<std::size_t>(4) * n);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < n; ++c)
          e[static_cast<std::size_t>(r) * n + c] =
              static_cast<Symbol>(sign[r] * set.at(perm[r], c));
      SequenceSet candidate(4, n, std::move(e));
      if (std::find(out.begin(), out.end(), candidate) == out.end())
        out.push_back(std::move(candidate));
    }
  }
  return out;
}

}  // namespace seqrl

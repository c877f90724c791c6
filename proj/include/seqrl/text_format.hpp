#pragma once

// Plain-text sequence format: one sequence per line, entries "+1" / "-1"
// separated by single spaces. Game states additionally allow "0". Blank lines
// and lines starting with '#' are skipped.

#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrl/game.hpp"

namespace seqrl {

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, int column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) +
                           ": " + what),
        line_(line),
        column_(column),
        message_(what) {}
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& message() const { return message_; }

 private:
  int line_;
  int column_;
  std::string message_;
};

struct SymbolRows {
  std::vector<std::vector<Symbol>> rows;
};

inline SymbolRows parse_symbol_rows(std::istream& in, bool allow_zero) {
  SymbolRows out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<Symbol> row;
    std::size_t pos = 0;
    while (true) {
      const std::size_t end = line.find(' ', pos);
      const std::string tok = line.substr(pos, end == std::string::npos ? end : end - pos);
      const int col = static_cast<int>(pos) + 1;
      if (tok == "+1") {
        row.push_back(1);
      } else if (tok == "-1") {
        row.push_back(-1);
      } else if (tok == "0" && allow_zero) {
        row.push_back(0);
      } else if (tok.empty()) {
        throw ParseError(line_no, col, "empty entry (entries are separated by single spaces)");
      } else {
        throw ParseError(line_no, col, "invalid entry \"" + tok + "\"");
      }
      if (end == std::string::npos) break;
      pos = end + 1;
    }
    if (!out.rows.empty() && row.size() != out.rows.front().size())
      throw ParseError(line_no, 1,
                       "row has " + std::to_string(row.size()) + " entries, expected " +
                           std::to_string(out.rows.front().size()));
    out.rows.push_back(std::move(row));
  }
  if (out.rows.empty()) throw ParseError(line_no + 1, 1, "no sequences found");
  return out;
}

inline SequenceSet parse_sequence_set(std::istream& in) {
  auto parsed = parse_symbol_rows(in, /*allow_zero=*/false);
  const int rows = static_cast<int>(parsed.rows.size());
  const int cols = static_cast<int>(parsed.rows.front().size());
  std::vector<Symbol> e;
  e.reserve(static_cast<std::size_t>(rows) * cols);
  for (auto& r : parsed.rows) e.insert(e.end(), r.begin(), r.end());
  return SequenceSet(rows, cols, std::move(e));
}

inline SequenceSet parse_sequence_set(const std::string& text) {
  std::istringstream in(text);
  return parse_sequence_set(in);
}

inline SequenceSet load_sequence_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_sequence_set(in);
}

inline void write_row(std::ostream& out, std::span<const Symbol> row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ' ';
    out << (row[i] == 1 ? "+1" : (row[i] == -1 ? "-1" : "0"));
  }
  out << '\n';
}

inline void write_sequence_set(std::ostream& out, const SequenceSet& set) {
  for (int r = 0; r < set.rows(); ++r) write_row(out, set.row(r));
}

inline std::string format_sequence_set(const SequenceSet& set) {
  std::ostringstream out;
  write_sequence_set(out, set);
  return out.str();
}

// A state is written as its K x N view followed, if present, by one line of
// padding cells.
inline void write_state(std::ostream& out, const GameState& s) {
  const auto& cfg = s.config();
  const auto cells = s.cells();
  for (int r = 0; r < cfg.K; ++r) write_row(out, cells.subspan(static_cast<std::size_t>(r) * cfg.N, cfg.N));
  if (cfg.padded_len() > cfg.cells()) write_row(out, cells.subspan(cfg.cells()));
}

inline GameState parse_state(std::istream& in, const GameConfig& cfg) {
  cfg.validate();
  std::vector<Symbol> cells;
  std::string line;
  int line_no = 0;
  // Rows may differ in length here (padding line), so parse line by line.
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream one(line);
    SymbolRows r;
    try {
      r = parse_symbol_rows(one, /*allow_zero=*/true);
    } catch (const ParseError& e) {
      throw ParseError(line_no, e.column(), e.message());
    }
    cells.insert(cells.end(), r.rows.front().begin(), r.rows.front().end());
  }
  if (static_cast<int>(cells.size()) == cfg.cells() && cfg.padded_len() > cfg.cells())
    cells.resize(cfg.padded_len(), 0);
  return GameState::from_cells(cfg, std::move(cells));
}

}  // namespace seqrl

#pragma once

// Reader and writer for the MATPOWER case subset used here: a version string,
// baseMVA and the bus, branch and gen matrices. Other mpc.* fields (gencost,
// name cell arrays, ...) are skipped. Buses keep their file order, which is
// the index order used everywhere else.

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ggn/errors.hpp"

namespace ggn::psse {

enum BusType { kPQ = 1, kPV = 2, kSlack = 3, kIsolated = 4 };

struct Bus {
  int id = 0;
  int type = kPQ;
  double Pd = 0, Qd = 0, Gs = 0, Bs = 0;
  int area = 1;
  double Vm = 1, Va = 0, base_kv = 0;
  int zone = 1;
  double Vmax = 1.1, Vmin = 0.9;
  bool operator==(const Bus&) const = default;
};

struct Branch {
  int from = 0, to = 0;
  double r = 0, x = 0, b = 0;
  double rate_a = 0, rate_b = 0, rate_c = 0;
  /// Off-nominal tap on the from side; 0 means nominal.
  double ratio = 0;
  double angle = 0;
  int status = 1;
  double angmin = -360, angmax = 360;

  [[nodiscard]] double tap() const { return ratio == 0.0 ? 1.0 : ratio; }
  bool operator==(const Branch&) const = default;
};

struct Gen {
  int bus = 0;
  double Pg = 0, Qg = 0, Qmax = 0, Qmin = 0, Vg = 1, mbase = 100;
  int status = 1;
  double Pmax = 0, Pmin = 0;
  bool operator==(const Gen&) const = default;
};

struct GridModel {
  std::string name = "case";
  double base_mva = 100;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Gen> gens;

  [[nodiscard]] int n_buses() const { return static_cast<int>(buses.size()); }

  /// Position of bus number `id` in the bus table.
  [[nodiscard]] int bus_index(int id) const {
    for (int i = 0; i < n_buses(); ++i)
      if (buses[i].id == id) return i;
    throw InvalidArgument("unknown bus number " + std::to_string(id));
  }

  [[nodiscard]] int slack_index() const {
    for (int i = 0; i < n_buses(); ++i)
      if (buses[i].type == kSlack) return i;
    throw InvalidArgument("case has no slack bus");
  }

  bool operator==(const GridModel&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Drops a trailing % comment that is not inside a quoted string.
inline std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\'') quoted = !quoted;
    if (s[i] == '%' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline double parse_number(std::string_view tok, int line) {
  const std::string t(tok);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) throw ParseError("malformed number '" + t + "'", line);
  return v;
}

inline int parse_int(std::string_view tok, int line) {
  const double v = parse_number(tok, line);
  if (v != static_cast<double>(static_cast<int>(v)))
    throw ParseError("expected an integer, got '" + std::string(tok) + "'", line);
  return static_cast<int>(v);
}

struct Row {
  int line = 0;
  std::vector<std::string> cells;
};

struct Table {
  int line = 0;
  std::vector<Row> rows;
};

/// Splits table content into rows; ';' and line breaks both end a row.
inline void add_table_text(Table& t, std::string_view text, int line, Row& pending) {
  std::string cell;
  auto flush_cell = [&] {
    if (!cell.empty()) pending.cells.push_back(cell);
    cell.clear();
  };
  auto flush_row = [&] {
    flush_cell();
    if (!pending.cells.empty()) t.rows.push_back(pending);
    pending = Row{};
  };
  for (char c : text) {
    if (pending.cells.empty() && cell.empty()) pending.line = line;
    if (c == ';') {
      flush_row();
    } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      flush_cell();
    } else {
      cell.push_back(c);
    }
  }
  flush_row();
}

inline void need_columns(const Row& r, std::size_t n, const char* table) {
  if (r.cells.size() < n)
    throw ParseError(std::string(table) + " row has " + std::to_string(r.cells.size()) +
                         " columns, expected at least " + std::to_string(n),
                     r.line);
}

}  // namespace detail

/// Parses a case file body. Errors carry the offending line number.
[[nodiscard]] inline GridModel parse_matpower_case(const std::string& text) {
  using namespace detail;
  GridModel g;
  std::map<std::string, Table> tables;
  bool have_base = false;
  int line_no = 0;
  std::string open_table;  // name of the table being read, "" if none
  bool skipping = false;   // inside a table or cell array that is ignored
  char close_char = ']';
  Row pending;
  int last_line = 0;

  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    last_line = line_no;
    std::string_view s = trim(strip_comment(raw));
    if (skipping || !open_table.empty()) {
      const auto close = s.find(close_char);
      const std::string_view body = close == std::string_view::npos ? s : s.substr(0, close);
      if (!open_table.empty()) add_table_text(tables[open_table], body, line_no, pending);
      if (close != std::string_view::npos) {
        open_table.clear();
        skipping = false;
      }
      continue;
    }
    if (s.empty()) continue;
    if (s.starts_with("function")) {
      if (const auto eq = s.find('='); eq != std::string_view::npos) g.name = std::string(trim(s.substr(eq + 1)));
      continue;
    }
    if (!s.starts_with("mpc.")) throw ParseError("unexpected statement '" + std::string(s) + "'", line_no);
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError("missing '=' in assignment", line_no);
    const std::string field(trim(s.substr(4, eq - 4)));
    std::string_view rhs = trim(s.substr(eq + 1));
    if (rhs.starts_with("[") || rhs.starts_with("{")) {
      close_char = rhs.front() == '[' ? ']' : '}';
      rhs.remove_prefix(1);
      const bool wanted = close_char == ']' && (field == "bus" || field == "branch" || field == "gen");
      if (wanted) {
        if (tables.count(field)) throw ParseError("duplicate table mpc." + field, line_no);
        tables[field].line = line_no;
        open_table = field;
        pending = Row{};
      } else {
        skipping = true;
      }
      const auto close = rhs.find(close_char);
      const std::string_view body = close == std::string_view::npos ? rhs : rhs.substr(0, close);
      if (wanted) add_table_text(tables[field], body, line_no, pending);
      if (close != std::string_view::npos) {
        open_table.clear();
        skipping = false;
      }
      continue;
    }
    if (rhs.ends_with(";")) rhs.remove_suffix(1);
    rhs = trim(rhs);
    if (field == "version") {
      std::string v(rhs);
      if (v.size() >= 2 && v.front() == '\'' && v.back() == '\'') v = v.substr(1, v.size() - 2);
      if (v != "2") throw UnsupportedFeature("case format version '" + v + "' (only version 2 is supported)");
    } else if (field == "baseMVA") {
      g.base_mva = parse_number(rhs, line_no);
      if (!(g.base_mva > 0.0)) throw ParseError("baseMVA must be positive", line_no);
      have_base = true;
    }
  }
  if (!open_table.empty() || skipping) throw ParseError("unterminated table", last_line);
  if (!have_base) throw ParseError("missing mpc.baseMVA", last_line);
  for (const char* name : {"bus", "branch", "gen"})
    if (!tables.count(name)) throw ParseError(std::string("missing table mpc.") + name, last_line);

  std::map<int, int> bus_pos;
  for (const auto& r : tables["bus"].rows) {
    need_columns(r, 13, "bus");
    Bus b;
    b.id = parse_int(r.cells[0], r.line);
    b.type = parse_int(r.cells[1], r.line);
    b.Pd = parse_number(r.cells[2], r.line);
    b.Qd = parse_number(r.cells[3], r.line);
    b.Gs = parse_number(r.cells[4], r.line);
    b.Bs = parse_number(r.cells[5], r.line);
    b.area = parse_int(r.cells[6], r.line);
    b.Vm = parse_number(r.cells[7], r.line);
    b.Va = parse_number(r.cells[8], r.line);
    b.base_kv = parse_number(r.cells[9], r.line);
    b.zone = parse_int(r.cells[10], r.line);
    b.Vmax = parse_number(r.cells[11], r.line);
    b.Vmin = parse_number(r.cells[12], r.line);
    if (b.type == kIsolated) throw UnsupportedFeature("isolated bus " + std::to_string(b.id));
    if (b.type < kPQ || b.type > kSlack) throw ParseError("invalid bus type", r.line);
    if (!bus_pos.emplace(b.id, g.n_buses()).second)
      throw ParseError("duplicate bus number " + std::to_string(b.id), r.line);
    g.buses.push_back(b);
  }
  if (g.n_buses() < 2) throw ParseError("case needs at least two buses", tables["bus"].line);
  int slacks = 0;
  for (const auto& b : g.buses) slacks += b.type == kSlack;
  if (slacks != 1)
    throw ParseError("case needs exactly one slack bus, found " + std::to_string(slacks), tables["bus"].line);

  for (const auto& r : tables["branch"].rows) {
    need_columns(r, 11, "branch");
    Branch br;
    br.from = parse_int(r.cells[0], r.line);
    br.to = parse_int(r.cells[1], r.line);
    br.r = parse_number(r.cells[2], r.line);
    br.x = parse_number(r.cells[3], r.line);
    br.b = parse_number(r.cells[4], r.line);
    br.rate_a = parse_number(r.cells[5], r.line);
    br.rate_b = parse_number(r.cells[6], r.line);
    br.rate_c = parse_number(r.cells[7], r.line);
    br.ratio = parse_number(r.cells[8], r.line);
    br.angle = parse_number(r.cells[9], r.line);
    br.status = parse_int(r.cells[10], r.line);
    if (r.cells.size() >= 13) {
      br.angmin = parse_number(r.cells[11], r.line);
      br.angmax = parse_number(r.cells[12], r.line);
    }
    if (!bus_pos.count(br.from) || !bus_pos.count(br.to))
      throw ParseError("branch references an unknown bus", r.line);
    if (br.from == br.to) throw ParseError("branch connects a bus to itself", r.line);
    if (br.status != 0 && br.angle != 0.0)
      throw UnsupportedFeature("phase-shifting transformer on branch " + std::to_string(br.from) + "-" +
                               std::to_string(br.to));
    if (br.status != 0 && br.r == 0.0 && br.x == 0.0)
      throw ParseError("branch has zero impedance", r.line);
    g.branches.push_back(br);
  }

  for (const auto& r : tables["gen"].rows) {
    need_columns(r, 10, "gen");
    Gen gen;
    gen.bus = parse_int(r.cells[0], r.line);
    gen.Pg = parse_number(r.cells[1], r.line);
    gen.Qg = parse_number(r.cells[2], r.line);
    gen.Qmax = parse_number(r.cells[3], r.line);
    gen.Qmin = parse_number(r.cells[4], r.line);
    gen.Vg = parse_number(r.cells[5], r.line);
    gen.mbase = parse_number(r.cells[6], r.line);
    gen.status = parse_int(r.cells[7], r.line);
    gen.Pmax = parse_number(r.cells[8], r.line);
    gen.Pmin = parse_number(r.cells[9], r.line);
    if (!bus_pos.count(gen.bus)) throw ParseError("generator references an unknown bus", r.line);
    g.gens.push_back(gen);
  }
  return g;
}

[[nodiscard]] inline GridModel load_matpower_case(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open case file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_matpower_case(ss.str());
}

/// Canonical text form; numbers use %.17g so a re-parse is exact.
[[nodiscard]] inline std::string serialize_case(const GridModel& g) {
  std::string out;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "\t%.17g", v);
    out += buf;
  };
  auto integer = [&](int v) {
    std::snprintf(buf, sizeof buf, "\t%d", v);
    out += buf;
  };
  out += "function mpc = " + g.name + "\nmpc.version = '2';\n";
  std::snprintf(buf, sizeof buf, "mpc.baseMVA = %.17g;\n", g.base_mva);
  out += buf;
  out += "\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n";
  for (const auto& b : g.buses) {
    integer(b.id), integer(b.type), num(b.Pd), num(b.Qd), num(b.Gs), num(b.Bs), integer(b.area);
    num(b.Vm), num(b.Va), num(b.base_kv), integer(b.zone), num(b.Vmax), num(b.Vmin);
    out += ";\n";
  }
  out += "];\n\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n";
  for (const auto& gen : g.gens) {
    integer(gen.bus), num(gen.Pg), num(gen.Qg), num(gen.Qmax), num(gen.Qmin), num(gen.Vg);
    num(gen.mbase), integer(gen.status), num(gen.Pmax), num(gen.Pmin);
    out += ";\n";
  }
  out += "];\n\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n";
  out += "mpc.branch = [\n";
  for (const auto& br : g.branches) {
    integer(br.from), integer(br.to), num(br.r), num(br.x), num(br.b), num(br.rate_a);
    num(br.rate_b), num(br.rate_c), num(br.ratio), num(br.angle), integer(br.status);
    num(br.angmin), num(br.angmax);
    out += ";\n";
  }
  out += "];\n";
  return out;
}

}  // namespace ggn::psse

#pragma once

// Case-file ingestion, validation and bus-admittance construction. All
// electrical quantities are per-unit on the case base power; demands and
// limits cross the I/O boundary in MW / MVar.
//
// Case format: UTF-8 text with sections [BASE], [BUS], [BRANCH], [MACHINE],
// [AVR], [PSS], [DR]; one record per line, whitespace-separated fields in
// declaration order; '#' starts a comment. save_case() emits the same format
// and round-trips every field bit-exactly.

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "sssopt/common.hpp"

namespace sssopt {

enum class BusKind { Slack, Pv, Pq };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::Pq;
  double v_set = 1.0;       // voltage setpoint (slack/PV) or initial guess (PQ), pu
  double p_d0_mw = 0.0;     // nominal real demand
  double q_d0_mvar = 0.0;   // nominal reactive demand
  double v_min = 0.8;
  double v_max = 1.2;
  double g_shunt = 0.0;     // fixed shunt admittance, pu on case base
  double b_shunt = 0.0;
};

struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;           // series resistance, pu
  double x = 0.0;           // series reactance, pu
  double b = 0.0;           // total line-charging susceptance, pu
  double h_max_mw = 0.0;    // flow limit per direction, MW
  double tap = 1.0;         // off-nominal turns ratio on the 'from' side
};

struct Machine {
  int bus = 0;
  double h = 0.0;           // inertia constant, s (on case base)
  double d = 0.0;           // damping torque coefficient, pu
  double ra = 0.0;          // armature resistance, pu
  double xd_t = 0.0;        // d-axis transient reactance x'_d, pu
  double xq_t = 0.0;        // q-axis transient reactance x'_q, pu
  double p_g0_mw = 0.0;     // scheduled real power (PV machines; ignored at slack)
  double tau_m0 = 0.0;      // mechanical torque setpoint, pu (back-computed at init)
  double v_f0 = 0.0;        // field voltage setpoint, pu (back-computed at init)
  double pg_min_mw = 0.0;   // real power bounds (meaningful for the slack machine)
  double pg_max_mw = 0.0;
  double qg_min_mvar = 0.0;
  double qg_max_mvar = 0.0;
};

struct Avr {
  int bus = 0;
  double ka = 0.0, ke = 0.0, kf = 0.0;       // gains
  double tr = 0.0, ta = 0.0, te = 0.0, tf = 0.0;  // time constants, s
  double ae = 0.0, be = 0.0;                 // ceiling function S_e = ae*exp(be*|vf|)
  double v_ref0 = 0.0;                       // reference setpoint (back-computed at init)
};

struct Pss {
  int bus = 0;
  double kw = 0.0;          // washout input gain on rotor speed deviation
  double tw = 0.0;          // washout time constant, s
  double t1 = 0.0, t2 = 0.0, t3 = 0.0, t4 = 0.0;  // lead-lag time constants, s
  double kw_min = 0.0, kw_max = 0.0;  // gain bounds for tuning scenarios
};

struct DrBus {
  int bus = 0;
  double p_min_mw = 0.0, p_max_mw = 0.0;
  double q_min_mvar = 0.0, q_max_mvar = 0.0;
  double mu = 0.0;          // real-to-reactive demand ratio for coupled shifting
};

struct SystemCase {
  double s_base_mva = 100.0;
  double f_hz = 60.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Machine> machines;
  std::vector<Avr> avrs;
  std::vector<Pss> psses;
  std::vector<DrBus> dr;

  double omega_base() const { return 2.0 * kPi * f_hz; }

  int bus_index(int id) const {
    for (size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return static_cast<int>(i);
    throw ValidationError("unknown bus id " + std::to_string(id));
  }
  bool has_bus(int id) const {
    for (const auto& b : buses)
      if (b.id == id) return true;
    return false;
  }
  int machine_at(int bus_id) const {  // -1 if none
    for (size_t i = 0; i < machines.size(); ++i)
      if (machines[i].bus == bus_id) return static_cast<int>(i);
    return -1;
  }
  int avr_at(int bus_id) const {
    for (size_t i = 0; i < avrs.size(); ++i)
      if (avrs[i].bus == bus_id) return static_cast<int>(i);
    return -1;
  }
  int pss_at(int bus_id) const {
    for (size_t i = 0; i < psses.size(); ++i)
      if (psses[i].bus == bus_id) return static_cast<int>(i);
    return -1;
  }
  int slack_index() const {
    for (size_t i = 0; i < buses.size(); ++i)
      if (buses[i].kind == BusKind::Slack) return static_cast<int>(i);
    throw ValidationError("no slack bus");
  }
  bool dr_contains(int bus_id) const {
    for (const auto& d : dr)
      if (d.bus == bus_id) return true;
    return false;
  }

  /// Nominal demand in pu, over all buses in case order.
  void nominal_demand(VectorXd& p_d, VectorXd& q_d) const {
    const int n = static_cast<int>(buses.size());
    p_d.resize(n);
    q_d.resize(n);
    for (int i = 0; i < n; ++i) {
      p_d[i] = buses[i].p_d0_mw / s_base_mva;
      q_d[i] = buses[i].q_d0_mvar / s_base_mva;
    }
  }
};

namespace detail {

inline bool is_blank(const std::string& s) {
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

struct FieldReader {
  std::istringstream in;
  int line_no;
  std::string section;
  int field = 0;
  FieldReader(const std::string& line, int line_no_, const std::string& section_)
      : in(line), line_no(line_no_), section(section_) {}
  double num(const char* name) {
    ++field;
    double v;
    if (!(in >> v))
      throw ParseError("line " + std::to_string(line_no) + ", " + section + " field " +
                       std::to_string(field) + " (" + name + "): expected a number");
    return v;
  }
  int integer(const char* name) {
    double v = num(name);
    if (v != std::floor(v))
      throw ParseError("line " + std::to_string(line_no) + ", " + section + " field " +
                       std::to_string(field) + " (" + name + "): expected an integer");
    return static_cast<int>(v);
  }
  std::string word(const char* name) {
    ++field;
    std::string w;
    if (!(in >> w))
      throw ParseError("line " + std::to_string(line_no) + ", " + section + " field " +
                       std::to_string(field) + " (" + name + "): expected a token");
    return w;
  }
  void done() {
    std::string extra;
    if (in >> extra)
      throw ParseError("line " + std::to_string(line_no) + ", " + section +
                       ": trailing field '" + extra + "'");
  }
};

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Check every case invariant; throws ValidationError naming the first violation.
inline void validate_case(const SystemCase& sc) {
  if (sc.s_base_mva <= 0) throw ValidationError("base power must be positive");
  if (sc.f_hz <= 0) throw ValidationError("system frequency must be positive");
  if (sc.buses.empty()) throw ValidationError("case has no buses");

  int n_slack = 0;
  std::map<int, int> seen;
  for (const auto& b : sc.buses) {
    if (seen.count(b.id)) throw ValidationError("duplicate bus id " + std::to_string(b.id));
    seen[b.id] = 1;
    if (b.kind == BusKind::Slack) ++n_slack;
    if (!(b.v_min < b.v_max))
      throw ValidationError("bus " + std::to_string(b.id) + ": V_min must be < V_max");
  }
  if (n_slack == 0) throw ValidationError("no slack bus");
  if (n_slack > 1) throw ValidationError("multiple slack buses");

  for (const auto& br : sc.branches) {
    if (br.from == br.to)
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            ": endpoints must differ");
    if (!sc.has_bus(br.from) || !sc.has_bus(br.to))
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            ": references an unknown bus");
    if (std::hypot(br.r, br.x) <= 0.0)
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            ": zero series impedance");
    if (br.tap <= 0.0)
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            ": turns ratio must be positive");
  }

  std::map<int, int> mach_per_bus;
  for (const auto& m : sc.machines) {
    if (!sc.has_bus(m.bus))
      throw ValidationError("machine at unknown bus " + std::to_string(m.bus));
    if (++mach_per_bus[m.bus] > 1)
      throw ValidationError("more than one machine at bus " + std::to_string(m.bus));
    if (m.h <= 0) throw ValidationError("machine at bus " + std::to_string(m.bus) + ": H must be > 0");
    if (m.xd_t <= 0)
      throw ValidationError("machine at bus " + std::to_string(m.bus) + ": x'_d must be > 0");
    if (m.xq_t <= 0)
      throw ValidationError("machine at bus " + std::to_string(m.bus) + ": x'_q must be > 0");
  }

  std::map<int, int> avr_per_bus;
  for (const auto& a : sc.avrs) {
    if (sc.machine_at(a.bus) < 0)
      throw ValidationError("AVR at bus " + std::to_string(a.bus) + " has no machine");
    if (++avr_per_bus[a.bus] > 1)
      throw ValidationError("more than one AVR at bus " + std::to_string(a.bus));
    if (a.tr <= 0 || a.ta <= 0 || a.te <= 0 || a.tf <= 0)
      throw ValidationError("AVR at bus " + std::to_string(a.bus) +
                            ": all time constants must be > 0");
  }

  std::map<int, int> pss_per_bus;
  for (const auto& p : sc.psses) {
    if (sc.machine_at(p.bus) < 0 || sc.avr_at(p.bus) < 0)
      throw ValidationError("PSS at bus " + std::to_string(p.bus) +
                            " requires a machine with an AVR at that bus");
    if (++pss_per_bus[p.bus] > 1)
      throw ValidationError("more than one PSS at bus " + std::to_string(p.bus));
    if (p.tw <= 0 || p.t2 <= 0 || p.t4 <= 0)
      throw ValidationError("PSS at bus " + std::to_string(p.bus) + ": T_w, T_2, T_4 must be > 0");
  }

  std::map<int, int> dr_per_bus;
  for (const auto& d : sc.dr) {
    if (!sc.has_bus(d.bus)) throw ValidationError("DR at unknown bus " + std::to_string(d.bus));
    if (++dr_per_bus[d.bus] > 1)
      throw ValidationError("duplicate DR record for bus " + std::to_string(d.bus));
    const Bus& b = sc.buses[sc.bus_index(d.bus)];
    if (!(d.p_min_mw <= b.p_d0_mw && b.p_d0_mw <= d.p_max_mw))
      throw ValidationError("DR bus " + std::to_string(d.bus) +
                            ": nominal demand outside [p_min, p_max]");
  }

  // Connectivity.
  if (!sc.branches.empty() || sc.buses.size() > 1) {
    std::map<int, std::vector<int>> adj;
    for (const auto& br : sc.branches) {
      adj[br.from].push_back(br.to);
      adj[br.to].push_back(br.from);
    }
    std::map<int, bool> visited;
    std::queue<int> q;
    q.push(sc.buses[0].id);
    visited[sc.buses[0].id] = true;
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u])
        if (!visited[v]) {
          visited[v] = true;
          q.push(v);
        }
    }
    for (const auto& b : sc.buses)
      if (!visited[b.id])
        throw ValidationError("network graph is not connected (bus " + std::to_string(b.id) +
                              " unreachable)");
  }
}

/// Parse a case from a stream. Validates before returning.
inline SystemCase load_case(std::istream& in) {
  SystemCase sc;
  std::string line, section;
  int line_no = 0;
  bool have_base = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (detail::is_blank(line)) continue;

    std::istringstream probe(line);
    std::string first;
    probe >> first;
    if (!first.empty() && first.front() == '[') {
      if (first.back() != ']')
        throw ParseError("line " + std::to_string(line_no) + ": malformed section header");
      section = first.substr(1, first.size() - 2);
      if (section != "BASE" && section != "BUS" && section != "BRANCH" && section != "MACHINE" &&
          section != "AVR" && section != "PSS" && section != "DR")
        throw ParseError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      continue;
    }
    if (section.empty())
      throw ParseError("line " + std::to_string(line_no) + ": record before any section header");

    detail::FieldReader f(line, line_no, section);
    if (section == "BASE") {
      sc.s_base_mva = f.num("s_base_mva");
      sc.f_hz = f.num("f_hz");
      f.done();
      have_base = true;
    } else if (section == "BUS") {
      Bus b;
      b.id = f.integer("id");
      std::string kind = f.word("kind");
      if (kind == "slack")
        b.kind = BusKind::Slack;
      else if (kind == "pv")
        b.kind = BusKind::Pv;
      else if (kind == "pq")
        b.kind = BusKind::Pq;
      else
        throw ParseError("line " + std::to_string(line_no) + ": bus kind must be slack|pv|pq");
      b.v_set = f.num("V0");
      b.p_d0_mw = f.num("p_d0");
      b.q_d0_mvar = f.num("q_d0");
      b.v_min = f.num("V_min");
      b.v_max = f.num("V_max");
      b.g_shunt = f.num("g_shunt");
      b.b_shunt = f.num("b_shunt");
      f.done();
      sc.buses.push_back(b);
    } else if (section == "BRANCH") {
      Branch br;
      br.from = f.integer("from");
      br.to = f.integer("to");
      br.r = f.num("r");
      br.x = f.num("x");
      br.b = f.num("b");
      br.h_max_mw = f.num("h_max_mw");
      br.tap = f.num("tap");
      f.done();
      sc.branches.push_back(br);
    } else if (section == "MACHINE") {
      Machine m;
      m.bus = f.integer("bus");
      m.h = f.num("H");
      m.d = f.num("D");
      m.ra = f.num("ra");
      m.xd_t = f.num("xd_t");
      m.xq_t = f.num("xq_t");
      m.p_g0_mw = f.num("p_g0_mw");
      m.tau_m0 = f.num("tau_m0");
      m.v_f0 = f.num("v_f0");
      m.pg_min_mw = f.num("pg_min_mw");
      m.pg_max_mw = f.num("pg_max_mw");
      m.qg_min_mvar = f.num("qg_min_mvar");
      m.qg_max_mvar = f.num("qg_max_mvar");
      f.done();
      sc.machines.push_back(m);
    } else if (section == "AVR") {
      Avr a;
      a.bus = f.integer("bus");
      a.ka = f.num("Ka");
      a.ke = f.num("Ke");
      a.kf = f.num("Kf");
      a.tr = f.num("Tr");
      a.ta = f.num("Ta");
      a.te = f.num("Te");
      a.tf = f.num("Tf");
      a.ae = f.num("Ae");
      a.be = f.num("Be");
      a.v_ref0 = f.num("Vref0");
      f.done();
      sc.avrs.push_back(a);
    } else if (section == "PSS") {
      Pss p;
      p.bus = f.integer("bus");
      p.kw = f.num("Kw");
      p.tw = f.num("Tw");
      p.t1 = f.num("T1");
      p.t2 = f.num("T2");
      p.t3 = f.num("T3");
      p.t4 = f.num("T4");
      p.kw_min = f.num("kw_min");
      p.kw_max = f.num("kw_max");
      f.done();
      sc.psses.push_back(p);
    } else if (section == "DR") {
      DrBus d;
      d.bus = f.integer("bus");
      d.p_min_mw = f.num("p_min_mw");
      d.p_max_mw = f.num("p_max_mw");
      d.q_min_mvar = f.num("q_min_mvar");
      d.q_max_mvar = f.num("q_max_mvar");
      d.mu = f.num("mu");
      f.done();
      sc.dr.push_back(d);
    }
  }
  if (!have_base) throw ParseError("missing [BASE] section");
  validate_case(sc);
  return sc;
}

inline SystemCase load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file: " + path);
  return load_case(in);
}

inline void save_case(const SystemCase& sc, std::ostream& out) {
  using detail::fmt;
  out << "[BASE]\n" << fmt(sc.s_base_mva) << " " << fmt(sc.f_hz) << "\n";
  out << "[BUS]\n";
  for (const auto& b : sc.buses) {
    const char* k = b.kind == BusKind::Slack ? "slack" : (b.kind == BusKind::Pv ? "pv" : "pq");
    out << b.id << " " << k << " " << fmt(b.v_set) << " " << fmt(b.p_d0_mw) << " "
        << fmt(b.q_d0_mvar) << " " << fmt(b.v_min) << " " << fmt(b.v_max) << " " << fmt(b.g_shunt)
        << " " << fmt(b.b_shunt) << "\n";
  }
  out << "[BRANCH]\n";
  for (const auto& br : sc.branches)
    out << br.from << " " << br.to << " " << fmt(br.r) << " " << fmt(br.x) << " " << fmt(br.b)
        << " " << fmt(br.h_max_mw) << " " << fmt(br.tap) << "\n";
  out << "[MACHINE]\n";
  for (const auto& m : sc.machines)
    out << m.bus << " " << fmt(m.h) << " " << fmt(m.d) << " " << fmt(m.ra) << " " << fmt(m.xd_t)
        << " " << fmt(m.xq_t) << " " << fmt(m.p_g0_mw) << " " << fmt(m.tau_m0) << " "
        << fmt(m.v_f0) << " " << fmt(m.pg_min_mw) << " " << fmt(m.pg_max_mw) << " "
        << fmt(m.qg_min_mvar) << " " << fmt(m.qg_max_mvar) << "\n";
  out << "[AVR]\n";
  for (const auto& a : sc.avrs)
    out << a.bus << " " << fmt(a.ka) << " " << fmt(a.ke) << " " << fmt(a.kf) << " " << fmt(a.tr)
        << " " << fmt(a.ta) << " " << fmt(a.te) << " " << fmt(a.tf) << " " << fmt(a.ae) << " "
        << fmt(a.be) << " " << fmt(a.v_ref0) << "\n";
  out << "[PSS]\n";
  for (const auto& p : sc.psses)
    out << p.bus << " " << fmt(p.kw) << " " << fmt(p.tw) << " " << fmt(p.t1) << " " << fmt(p.t2)
        << " " << fmt(p.t3) << " " << fmt(p.t4) << " " << fmt(p.kw_min) << " " << fmt(p.kw_max)
        << "\n";
  out << "[DR]\n";
  for (const auto& d : sc.dr)
    out << d.bus << " " << fmt(d.p_min_mw) << " " << fmt(d.p_max_mw) << " " << fmt(d.q_min_mvar)
        << " " << fmt(d.q_max_mvar) << " " << fmt(d.mu) << "\n";
}

inline void save_case(const SystemCase& sc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  save_case(sc, out);
}

/// Bus admittance matrix. Off-diagonals are the negated (effective) series
/// admittance; diagonals collect series, line-charging and fixed bus shunts.
/// Real turns ratios keep the matrix symmetric.
inline MatrixXcd admittance(const SystemCase& sc) {
  const int n = static_cast<int>(sc.buses.size());
  MatrixXcd y = MatrixXcd::Zero(n, n);
  for (const auto& br : sc.branches) {
    if (std::hypot(br.r, br.x) <= 0.0)
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            ": zero series impedance");
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex ysh(0.0, br.b / 2.0);
    const double t = br.tap;
    const int i = sc.bus_index(br.from);
    const int j = sc.bus_index(br.to);
    y(i, i) += (ys + ysh) / (t * t);
    y(j, j) += ys + ysh;
    y(i, j) -= ys / t;
    y(j, i) -= ys / t;
  }
  for (int i = 0; i < n; ++i) y(i, i) += Complex(sc.buses[i].g_shunt, sc.buses[i].b_shunt);
  return y;
}

}  // namespace sssopt

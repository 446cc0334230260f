#pragma once

// Per-tick flight log: one row per control tick, column-headered CSV with
// shortest round-trip number formatting, plus a JSON metadata sidecar.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "imav/config.hpp"

namespace imav {

struct LogRow {
  double t{0};
  // Truth.
  double true_x{0}, true_y{0}, true_z{0};
  double true_vx{0}, true_vy{0}, true_vz{0};
  double true_qw{1}, true_qx{0}, true_qy{0}, true_qz{0};
  double true_wx{0}, true_wy{0}, true_wz{0};
  double true_landed{0};
  double terrain_h{0};
  // Raw sensors (present flags are 0/1).
  double imu_present{0}, imu_t{0};
  double gyro_x{0}, gyro_y{0}, gyro_z{0};
  double acc_x{0}, acc_y{0}, acc_z{0};
  double tof_present{0}, tof_valid{0}, tof_t{0}, tof_d{0};
  double flow_present{0}, flow_t{0}, flow_x{0}, flow_y{0}, flow_q{0};
  // Estimate.
  double est_qw{1}, est_qx{0}, est_qy{0}, est_qz{0};
  double est_wx{0}, est_wy{0}, est_wz{0};
  double est_bx{0}, est_by{0}, est_bz{0};
  double est_z{0}, est_vz{0};
  double est_x{0}, est_y{0}, est_vx{0}, est_vy{0};
  double est_ex{0}, est_ey{0};
  double alt_p00{0}, alt_p01{0}, alt_p11{0};
  double latx_p00{0}, latx_p01{0}, latx_p11{0};
  double laty_p00{0}, laty_p01{0}, laty_p11{0};
  double thrust_in{0};
  // Setpoint (sp_mode: 0 terrain-relative, 1 absolute).
  double sp_x{0}, sp_y{0}, sp_z{0}, sp_yaw{0}, sp_mode{0};
  // Command.
  double cmd_thrust{0}, cmd_tx{0}, cmd_ty{0}, cmd_tz{0};
  // High-level command applied at this tick (0 none, 1 applied, 2 clamped).
  double hl_event{0}, hl_dx{0}, hl_dy{0}, hl_dz{0}, hl_dyaw{0};
  double fault{0};

  bool operator==(const LogRow&) const = default;
};

struct LogColumn {
  const char* name;
  double LogRow::*field;
};

// clang-format off
inline const std::vector<LogColumn>& log_columns() {
  static const std::vector<LogColumn> cols = {
    {"t", &LogRow::t},
    {"true_x", &LogRow::true_x}, {"true_y", &LogRow::true_y}, {"true_z", &LogRow::true_z},
    {"true_vx", &LogRow::true_vx}, {"true_vy", &LogRow::true_vy}, {"true_vz", &LogRow::true_vz},
    {"true_qw", &LogRow::true_qw}, {"true_qx", &LogRow::true_qx}, {"true_qy", &LogRow::true_qy},
    {"true_qz", &LogRow::true_qz},
    {"true_wx", &LogRow::true_wx}, {"true_wy", &LogRow::true_wy}, {"true_wz", &LogRow::true_wz},
    {"true_landed", &LogRow::true_landed}, {"terrain_h", &LogRow::terrain_h},
    {"imu_present", &LogRow::imu_present}, {"imu_t", &LogRow::imu_t},
    {"gyro_x", &LogRow::gyro_x}, {"gyro_y", &LogRow::gyro_y}, {"gyro_z", &LogRow::gyro_z},
    {"acc_x", &LogRow::acc_x}, {"acc_y", &LogRow::acc_y}, {"acc_z", &LogRow::acc_z},
    {"tof_present", &LogRow::tof_present}, {"tof_valid", &LogRow::tof_valid},
    {"tof_t", &LogRow::tof_t}, {"tof_d", &LogRow::tof_d},
    {"flow_present", &LogRow::flow_present}, {"flow_t", &LogRow::flow_t},
    {"flow_x", &LogRow::flow_x}, {"flow_y", &LogRow::flow_y}, {"flow_q", &LogRow::flow_q},
    {"est_qw", &LogRow::est_qw}, {"est_qx", &LogRow::est_qx}, {"est_qy", &LogRow::est_qy},
    {"est_qz", &LogRow::est_qz},
    {"est_wx", &LogRow::est_wx}, {"est_wy", &LogRow::est_wy}, {"est_wz", &LogRow::est_wz},
    {"est_bx", &LogRow::est_bx}, {"est_by", &LogRow::est_by}, {"est_bz", &LogRow::est_bz},
    {"est_z", &LogRow::est_z}, {"est_vz", &LogRow::est_vz},
    {"est_x", &LogRow::est_x}, {"est_y", &LogRow::est_y},
    {"est_vx", &LogRow::est_vx}, {"est_vy", &LogRow::est_vy},
    {"est_ex", &LogRow::est_ex}, {"est_ey", &LogRow::est_ey},
    {"alt_p00", &LogRow::alt_p00}, {"alt_p01", &LogRow::alt_p01}, {"alt_p11", &LogRow::alt_p11},
    {"latx_p00", &LogRow::latx_p00}, {"latx_p01", &LogRow::latx_p01},
    {"latx_p11", &LogRow::latx_p11},
    {"laty_p00", &LogRow::laty_p00}, {"laty_p01", &LogRow::laty_p01},
    {"laty_p11", &LogRow::laty_p11},
    {"thrust_in", &LogRow::thrust_in},
    {"sp_x", &LogRow::sp_x}, {"sp_y", &LogRow::sp_y}, {"sp_z", &LogRow::sp_z},
    {"sp_yaw", &LogRow::sp_yaw}, {"sp_mode", &LogRow::sp_mode},
    {"cmd_thrust", &LogRow::cmd_thrust}, {"cmd_tx", &LogRow::cmd_tx},
    {"cmd_ty", &LogRow::cmd_ty}, {"cmd_tz", &LogRow::cmd_tz},
    {"hl_event", &LogRow::hl_event}, {"hl_dx", &LogRow::hl_dx}, {"hl_dy", &LogRow::hl_dy},
    {"hl_dz", &LogRow::hl_dz}, {"hl_dyaw", &LogRow::hl_dyaw},
    {"fault", &LogRow::fault},
  };
  return cols;
}
// clang-format on

namespace detail {

inline void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    throw std::runtime_error("log: malformed number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

inline std::string log_header() {
  std::string h;
  for (const auto& c : log_columns()) {
    if (!h.empty()) h += ',';
    h += c.name;
  }
  return h;
}

inline std::string format_row(const LogRow& r) {
  std::string s;
  s.reserve(1024);
  bool first = true;
  for (const auto& c : log_columns()) {
    if (!first) s += ',';
    first = false;
    detail::append_number(s, r.*(c.field));
  }
  return s;
}

inline LogRow parse_row(std::string_view line) {
  LogRow r;
  const auto& cols = log_columns();
  std::size_t i = 0, pos = 0;
  while (i < cols.size()) {
    const std::size_t comma = line.find(',', pos);
    const std::string_view field =
        line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    r.*(cols[i].field) = detail::parse_number(field);
    ++i;
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (i != cols.size()) throw std::runtime_error("log: row has too few columns");
  return r;
}

/// In-memory log of a run plus its metadata sidecar.
struct FlightLog {
  std::vector<LogRow> rows;
  nlohmann::json metadata = nlohmann::json::object();

  /// FNV-1a over the CSV text (header and every row).
  std::string hash() const {
    std::uint64_t h = fnv1a(log_header());
    for (const auto& r : rows) h = fnv1a("\n" + format_row(r), h);
    return hex64(h);
  }

  void write_csv(std::ostream& out) const {
    out << log_header() << '\n';
    for (const auto& r : rows) out << format_row(r) << '\n';
  }

  /// Writes <stem>.csv and <stem>.json.
  void save(const std::string& stem) const {
    std::ofstream csv(stem + ".csv");
    if (!csv) throw std::runtime_error("cannot write log: " + stem + ".csv");
    write_csv(csv);
    std::ofstream meta(stem + ".json");
    if (!meta) throw std::runtime_error("cannot write log metadata: " + stem + ".json");
    meta << metadata.dump(2) << '\n';
  }

  static FlightLog read_csv(std::istream& in) {
    FlightLog log;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("log: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != log_header()) throw std::runtime_error("log: unexpected column header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      log.rows.push_back(parse_row(line));
    }
    return log;
  }

  /// Loads a log from its CSV path (or stem); the sidecar is optional.
  static FlightLog load(std::string path) {
    std::string stem = path;
    if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".csv") stem.resize(stem.size() - 4);
    std::ifstream csv(stem + ".csv");
    if (!csv) throw std::runtime_error("cannot open log: " + stem + ".csv");
    FlightLog log = read_csv(csv);
    std::ifstream meta(stem + ".json");
    if (meta) meta >> log.metadata;
    return log;
  }
};

/// Fixed-capacity row buffer that streams to an output on overflow, so a run
/// of `capacity` rows never touches the sink before it completes.
class BufferedLogSink {
 public:
  static constexpr std::size_t kDefaultCapacity = 7488;  // 15.6 s at 480 Hz

  BufferedLogSink(std::ostream& out, std::size_t capacity = kDefaultCapacity)
      : out_(out), capacity_(capacity) {
    buffer_.reserve(capacity_);
    out_ << log_header() << '\n';
  }
  ~BufferedLogSink() { flush(); }

  void push(const LogRow& r) {
    if (buffer_.size() == capacity_) flush();
    buffer_.push_back(r);
  }

  void flush() {
    for (const auto& r : buffer_) out_ << format_row(r) << '\n';
    if (!buffer_.empty()) ++flushes_;
    buffer_.clear();
    out_.flush();
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t buffered() const { return buffer_.size(); }
  std::size_t flushes() const { return flushes_; }

 private:
  std::ostream& out_;
  std::size_t capacity_;
  std::vector<LogRow> buffer_;
  std::size_t flushes_{0};
};

}  // namespace imav

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hdphmm/errors.hpp"

namespace hdphmm {

using CountArray = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>;

/// C x T grid of spike counts per bin, immutable after construction.
struct CountMatrix {
  CountArray counts;                  // cells x bins
  double bin_width = 0.25;            // seconds
  std::vector<std::string> cell_ids;  // length C

  CountMatrix() = default;
  CountMatrix(CountArray c, double width = 0.25,
              std::vector<std::string> ids = {})
      : counts(std::move(c)), bin_width(width), cell_ids(std::move(ids)) {
    if (counts.rows() < 1 || counts.cols() < 1) {
      throw EmptyData("count matrix must have C >= 1 and T >= 1");
    }
    if ((counts.array() < 0).any()) {
      throw DomainError("count matrix entries must be nonnegative");
    }
    if (cell_ids.empty()) {
      for (Eigen::Index c = 0; c < counts.rows(); ++c) {
        cell_ids.push_back("cell" + std::to_string(c));
      }
    }
    if (static_cast<Eigen::Index>(cell_ids.size()) != counts.rows()) {
      throw ShapeMismatch("cell_ids length must equal row count");
    }
  }

  Eigen::Index n_cells() const { return counts.rows(); }
  Eigen::Index n_bins() const { return counts.cols(); }
  long total_spikes() const { return counts.sum(); }
};

/// Behavioral position per time bin. Polar coordinates are relative to the
/// arena center used at construction.
struct PositionTrace {
  std::vector<long> t_index;
  std::vector<double> r;      // cm
  std::vector<double> theta;  // radians in [-pi, pi)
  std::vector<double> x;      // cm
  std::vector<double> y;      // cm
  std::vector<double> speed;  // cm/s

  std::size_t size() const { return r.size(); }

  /// Builds the trace from Cartesian samples; radius/angle are derived with
  /// the arena center at the centroid of the observed positions.
  static PositionTrace from_xy(std::vector<double> xs, std::vector<double> ys,
                               std::vector<double> speeds) {
    if (xs.size() != ys.size() || xs.size() != speeds.size()) {
      throw LengthMismatch("position columns must have equal length");
    }
    if (xs.empty()) throw EmptyData("empty position trace");
    double cx = 0.0, cy = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      cx += xs[t];
      cy += ys[t];
    }
    cx /= static_cast<double>(xs.size());
    cy /= static_cast<double>(ys.size());
    PositionTrace out;
    out.x = std::move(xs);
    out.y = std::move(ys);
    out.speed = std::move(speeds);
    out.t_index.resize(out.x.size());
    out.r.resize(out.x.size());
    out.theta.resize(out.x.size());
    for (std::size_t t = 0; t < out.x.size(); ++t) {
      out.t_index[t] = static_cast<long>(t);
      double dx = out.x[t] - cx;
      double dy = out.y[t] - cy;
      out.r[t] = std::hypot(dx, dy);
      double th = std::atan2(dy, dx);
      if (th >= M_PI) th -= 2.0 * M_PI;  // atan2 returns (-pi, pi]
      out.theta[t] = th;
    }
    return out;
  }
};

/// Contiguous train/test column split: [0, t_train) and
/// [t_train, t_train + t_test).
struct SplitSpec {
  Eigen::Index t_train = 0;
  Eigen::Index t_test = 0;

  void validate(Eigen::Index total) const {
    if (t_train < 1 || t_test < 0 || t_train + t_test > total) {
      throw RangeError("split ranges exceed the available bins");
    }
  }
};

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_count(const std::string& s, long& value) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    value = std::stol(s, &pos);
  } catch (...) {
    return false;
  }
  if (pos != s.size()) return false;
  // reject non-integer shapes like "1.5" already via pos; sign checked here
  return value >= 0;
}

}  // namespace detail

/// Reads a counts CSV with header `cell_id,t0,t1,...`; one row per cell.
inline CountMatrix load_counts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open counts file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw EmptyData("counts file has no header");
  auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "cell_id") {
    throw ParseError("counts header must start with cell_id", 0, 0);
  }
  const long T = static_cast<long>(header.size()) - 1;
  if (T < 1) throw EmptyData("counts file has no time bins");

  std::vector<std::string> ids;
  std::vector<std::vector<long>> rows;
  long row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (static_cast<long>(fields.size()) != T + 1) {
      throw ParseError("ragged row", row_no, static_cast<long>(fields.size()));
    }
    std::vector<long> vals(T);
    for (long j = 0; j < T; ++j) {
      if (!detail::parse_count(fields[j + 1], vals[j])) {
        throw ParseError("cell value is not a nonnegative integer", row_no,
                         j + 1);
      }
    }
    ids.push_back(fields[0]);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw EmptyData("counts file has no data rows");

  CountArray counts(static_cast<Eigen::Index>(rows.size()), T);
  for (std::size_t c = 0; c < rows.size(); ++c) {
    for (long t = 0; t < T; ++t) counts(static_cast<Eigen::Index>(c), t) = rows[c][t];
  }
  return CountMatrix(std::move(counts), 0.25, std::move(ids));
}

inline void save_counts(const CountMatrix& cm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write counts file: " + path);
  out << "cell_id";
  for (Eigen::Index t = 0; t < cm.n_bins(); ++t) out << ",t" << t;
  out << "\n";
  for (Eigen::Index c = 0; c < cm.n_cells(); ++c) {
    out << cm.cell_ids[c];
    for (Eigen::Index t = 0; t < cm.n_bins(); ++t) out << ',' << cm.counts(c, t);
    out << "\n";
  }
}

/// Positions CSV: header `t,x_cm,y_cm,speed_cms`, one row per bin.
inline PositionTrace load_positions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open positions file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw EmptyData("positions file has no header");
  if (line != "t,x_cm,y_cm,speed_cms") {
    throw ParseError("unexpected positions header", 0, 0);
  }
  std::vector<double> xs, ys, speeds;
  long row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 4) {
      throw ParseError("positions row needs 4 fields", row_no,
                       static_cast<long>(fields.size()));
    }
    try {
      xs.push_back(std::stod(fields[1]));
      ys.push_back(std::stod(fields[2]));
      speeds.push_back(std::stod(fields[3]));
    } catch (...) {
      throw ParseError("positions row is not numeric", row_no, 1);
    }
  }
  if (xs.empty()) throw EmptyData("positions file has no data rows");
  return PositionTrace::from_xy(std::move(xs), std::move(ys), std::move(speeds));
}

inline void save_positions(const PositionTrace& pos, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write positions file: " + path);
  out << "t,x_cm,y_cm,speed_cms\n";
  char buf[128];
  for (std::size_t t = 0; t < pos.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", t, pos.x[t],
                  pos.y[t], pos.speed[t]);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Binning and partitioning

/// Bins per-cell spike times into counts on [t_start, t_end) with half-open
/// bins [t_start + k*dt, t_start + (k+1)*dt); a spike exactly at t_end is
/// excluded.
inline CountMatrix bin_spikes(const std::vector<std::vector<double>>& spike_times,
                              double bin_width, double t_start, double t_end) {
  if (!(bin_width > 0.0)) throw DomainError("bin_width must be positive");
  if (!(t_end > t_start)) throw InvalidWindow("t_end must exceed t_start");
  if (spike_times.empty()) throw EmptyData("no cells supplied");
  const auto T = static_cast<Eigen::Index>(
      std::ceil((t_end - t_start) / bin_width));
  CountArray counts = CountArray::Zero(
      static_cast<Eigen::Index>(spike_times.size()), T);
  for (std::size_t c = 0; c < spike_times.size(); ++c) {
    for (double s : spike_times[c]) {
      if (s < t_start || s >= t_end) continue;
      auto k = static_cast<Eigen::Index>(std::floor((s - t_start) / bin_width));
      if (k >= T) k = T - 1;  // guard the floating edge of the last bin
      counts(static_cast<Eigen::Index>(c), k) += 1;
    }
  }
  return CountMatrix(std::move(counts), bin_width);
}

/// Keeps only bins with speed strictly above the threshold, preserving
/// temporal order in both structures.
inline std::pair<CountMatrix, PositionTrace> filter_run_epochs(
    const CountMatrix& counts, const PositionTrace& pos,
    double speed_threshold) {
  if (static_cast<std::size_t>(counts.n_bins()) != pos.size()) {
    throw LengthMismatch("counts and positions must cover the same bins");
  }
  std::vector<Eigen::Index> keep;
  for (std::size_t t = 0; t < pos.size(); ++t) {
    if (pos.speed[t] > speed_threshold) keep.push_back(static_cast<Eigen::Index>(t));
  }
  if (keep.empty()) throw EmptyData("no bins exceed the speed threshold");
  CountArray sub(counts.n_cells(), static_cast<Eigen::Index>(keep.size()));
  PositionTrace fpos;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    sub.col(static_cast<Eigen::Index>(j)) = counts.counts.col(keep[j]);
    auto t = static_cast<std::size_t>(keep[j]);
    fpos.t_index.push_back(static_cast<long>(j));
    fpos.r.push_back(pos.r[t]);
    fpos.theta.push_back(pos.theta[t]);
    fpos.x.push_back(pos.x[t]);
    fpos.y.push_back(pos.y[t]);
    fpos.speed.push_back(pos.speed[t]);
  }
  return {CountMatrix(std::move(sub), counts.bin_width, counts.cell_ids),
          std::move(fpos)};
}

/// Contiguous column slices per the split spec; no overlap.
inline std::pair<CountMatrix, CountMatrix> split(const CountMatrix& counts,
                                                 const SplitSpec& spec) {
  spec.validate(counts.n_bins());
  if (spec.t_test < 1) throw RangeError("test range must be nonempty");
  CountArray train = counts.counts.leftCols(spec.t_train);
  CountArray test = counts.counts.middleCols(spec.t_train, spec.t_test);
  return {CountMatrix(std::move(train), counts.bin_width, counts.cell_ids),
          CountMatrix(std::move(test), counts.bin_width, counts.cell_ids)};
}

/// Column slice of a position trace matching a count split.
inline PositionTrace slice_positions(const PositionTrace& pos, std::size_t begin,
                                     std::size_t len) {
  if (begin + len > pos.size()) throw RangeError("position slice out of range");
  PositionTrace out;
  for (std::size_t t = begin; t < begin + len; ++t) {
    out.t_index.push_back(static_cast<long>(t - begin));
    out.r.push_back(pos.r[t]);
    out.theta.push_back(pos.theta[t]);
    out.x.push_back(pos.x[t]);
    out.y.push_back(pos.y[t]);
    out.speed.push_back(pos.speed[t]);
  }
  return out;
}

}  // namespace hdphmm

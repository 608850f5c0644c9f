#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdphmm/count_data.hpp"
#include "hdphmm/errors.hpp"
#include "hdphmm/gibbs.hpp"
#include "hdphmm/hmm.hpp"
#include "hdphmm/vb.hpp"

namespace hdphmm {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Eigen <-> JSON

inline json to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  if (j.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()),
                    static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    for (std::size_t k = 0; k < j[i].size(); ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          j[i][k].get<double>();
    }
  }
  return m;
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError(std::string("invalid JSON in ") + path + ": " + e.what(),
                     0, 0);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Chain traces and snapshots

inline void write_trace_csv(const ChainTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iter,loglik,n_states,n_states_95,alpha0,gamma\n";
  char buf[256];
  for (const auto& r : trace.records) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%d,%d,%.17g,%.17g\n", r.iter,
                  r.loglik, r.n_states, r.n_states_95, r.alpha0, r.gamma);
    out << buf;
  }
}

inline void write_elbo_csv(const std::vector<double>& trace,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iter,elbo\n";
  char buf[128];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, trace[i]);
    out << buf;
  }
}

inline json snapshot_to_json(const GibbsState& s) {
  json j;
  j["iter"] = s.iteration;
  j["pi"] = to_json(s.hmm.pi);
  j["P"] = to_json(s.hmm.P);
  j["Lambda"] = to_json(s.hmm.Lambda);
  j["beta"] = to_json(s.hdp.beta);
  j["alpha0"] = s.hdp.alpha0;
  j["gamma"] = s.hdp.gamma;
  j["seq"] = s.seq;
  return j;
}

inline void write_snapshots(const ChainTrace& trace, const std::string& path) {
  json j;
  j["samples"] = json::array();
  for (const auto& s : trace.snapshots) j["samples"].push_back(snapshot_to_json(s));
  write_json_file(j, path);
}

struct LoadedSnapshots {
  std::vector<HmmParams> params;
  std::vector<StateSequence> seqs;
};

inline LoadedSnapshots load_snapshots(const std::string& path) {
  json j = read_json_file(path);
  LoadedSnapshots out;
  for (const auto& s : j.at("samples")) {
    HmmParams p;
    p.pi = vector_from_json(s.at("pi"));
    p.P = matrix_from_json(s.at("P"));
    p.Lambda = matrix_from_json(s.at("Lambda"));
    out.params.push_back(std::move(p));
    out.seqs.push_back(s.at("seq").get<StateSequence>());
  }
  if (out.params.empty()) throw EmptyData("no samples in " + path);
  return out;
}

// ---------------------------------------------------------------------------
// Variational factors

inline void write_vb_factors(const VariationalState& v, const std::string& path) {
  json j;
  j["finite"] = v.finite;
  j["rate_a"] = to_json(v.rate_a);
  j["rate_b"] = to_json(v.rate_b);
  j["trans_alpha"] = to_json(v.trans_alpha);
  j["init_alpha"] = to_json(v.init_alpha);
  j["beta_star"] = to_json(v.beta_star);
  j["gamma"] = to_json(v.gamma);
  j["map_seq"] = map_state_sequence(v);
  write_json_file(j, path);
}

inline VariationalState load_vb_factors(const std::string& path) {
  json j = read_json_file(path);
  VariationalState v;
  v.finite = j.at("finite").get<bool>();
  v.rate_a = matrix_from_json(j.at("rate_a"));
  v.rate_b = matrix_from_json(j.at("rate_b"));
  v.trans_alpha = matrix_from_json(j.at("trans_alpha"));
  v.init_alpha = vector_from_json(j.at("init_alpha"));
  v.beta_star = vector_from_json(j.at("beta_star"));
  v.gamma = matrix_from_json(j.at("gamma"));
  return v;
}

// ---------------------------------------------------------------------------
// Ground truth

inline void write_ground_truth(const HmmParams& hmm, const HdpParams& hdp,
                               const StateSequence& seq, const json& config_echo,
                               const std::string& path) {
  json j;
  j["states"] = seq;
  j["pi"] = to_json(hmm.pi);
  j["P"] = to_json(hmm.P);
  j["Lambda"] = to_json(hmm.Lambda);
  j["beta"] = to_json(hdp.beta);
  j["alpha0"] = hdp.alpha0;
  j["gamma"] = hdp.gamma;
  j["config"] = config_echo;
  write_json_file(j, path);
}

struct GroundTruth {
  HmmParams hmm;
  HdpParams hdp;
  StateSequence seq;
};

inline GroundTruth load_ground_truth(const std::string& path) {
  json j = read_json_file(path);
  GroundTruth gt;
  gt.hmm.pi = vector_from_json(j.at("pi"));
  gt.hmm.P = matrix_from_json(j.at("P"));
  gt.hmm.Lambda = matrix_from_json(j.at("Lambda"));
  gt.hdp.beta = vector_from_json(j.at("beta"));
  gt.hdp.alpha0 = j.at("alpha0").get<double>();
  gt.hdp.gamma = j.at("gamma").get<double>();
  gt.hdp.M = static_cast<int>(gt.hdp.beta.size());
  gt.seq = j.at("states").get<StateSequence>();
  return gt;
}

}  // namespace hdphmm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "afm/error.hpp"

namespace afm::acceptance {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Report {
 public:
  explicit Report(std::vector<int> only = {}) : only_(std::move(only)) {
    // Lines are mirrored to $AFM_ACCEPTANCE_REPORT when set.
    if (const char* path = std::getenv("AFM_ACCEPTANCE_REPORT")) file_.open(path, std::ios::trunc);
  }

  // A positive `limit_s` also fails the criterion when exceeded.
  void run(int id, const std::string& name, const std::function<Verdict()>& body, double limit_s = 0.0) {
    if (!selected(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_s > 0.0 && s > limit_s) {
      v.pass = false;
      v.detail += "; runtime over " + std::to_string(static_cast<int>(limit_s)) + " s";
    }
    char timing[32];
    std::snprintf(timing, sizeof timing, " [%.1f s]", s);
    emit(std::string(v.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " " + name + ": " + v.detail +
         timing);
    all_ &= v.pass;
  }
  void blocked(int id, const std::string& name, const std::string& why) {
    if (!selected(id)) return;
    emit("FAIL criterion " + std::to_string(id) + " " + name + ": blocked, " + why);
    all_ = false;
  }
  bool all_passed() const { return all_; }

 private:
  void emit(const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (file_) file_ << line << '\n' << std::flush;
  }
  bool selected(int id) const { return only_.empty() || std::find(only_.begin(), only_.end(), id) != only_.end(); }

  std::vector<int> only_;
  std::ofstream file_;
  bool all_ = true;
};

inline double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct PairedTest {
  double mean_diff = 0.0;
  double t = 0.0;
  double p = 1.0;  // one-sided, H1: a > b
};

// Paired one-sided t-test on a - b.
inline PairedTest paired_greater(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  PairedTest r;
  r.mean_diff = mean(d);
  double ss = 0.0;
  for (double v : d) ss += (v - r.mean_diff) * (v - r.mean_diff);
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  if (sd == 0.0) {
    r.t = r.mean_diff > 0.0 ? INFINITY : (r.mean_diff < 0.0 ? -INFINITY : 0.0);
    r.p = r.mean_diff > 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t = r.mean_diff / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  r.p = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Drops the last (wall-clock) field of each data row.
inline std::string strip_wall(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') {
      const auto cut = line.rfind(',');
      if (cut != std::string::npos) line.resize(cut);
    }
    out += line + "\n";
  }
  return out;
}

}  // namespace afm::acceptance

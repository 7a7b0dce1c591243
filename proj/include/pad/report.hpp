#pragma once

#include <string>
#include <vector>

#include "pad/env.hpp"
#include "pad/planning.hpp"

namespace pad::report {

struct SweepRow {
    i64 replan_interval = 1;  // N
    i64 top_k = 5;            // K
    env::ReportRow row;
};

/// Header: task,seed,N,K,success_rate,mean_steps,std_steps,n_success
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

/// Episode-length histogram as a standalone SVG file.
void write_histogram_svg(const std::string& path, const std::vector<i64>& values,
                         const std::string& title, i64 bin_width = 10);

/// Energy-vs-lambda scatter across replanning steps (one shade per replan,
/// chosen candidates highlighted).
struct ScatterPoint {
    i64 replan_idx = 0;
    double lambda = 0.0;
    double energy = 0.0;
    bool chosen = false;
};
void write_lambda_energy_svg(const std::string& path, const std::vector<ScatterPoint>& points,
                             const std::string& title);

}  // namespace pad::report

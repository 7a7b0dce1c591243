#include "pad/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pad/errors.hpp"

namespace pad::report {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + path);
    f << "task,seed,N,K,success_rate,mean_steps,std_steps,n_success\n";
    for (const auto& r : rows) {
        f << r.row.task << "," << r.row.seed << "," << r.replan_interval << "," << r.top_k << ","
          << fmt(r.row.success_rate) << "," << fmt(r.row.mean_steps) << ","
          << fmt(r.row.std_steps) << "," << r.row.n_success << "\n";
    }
}

void write_histogram_svg(const std::string& path, const std::vector<i64>& values,
                         const std::string& title, i64 bin_width) {
    if (bin_width < 1) bin_width = 1;
    i64 vmax = 0;
    for (i64 v : values) vmax = std::max(vmax, v);
    const i64 nbins = vmax / bin_width + 1;
    std::vector<i64> counts(static_cast<size_t>(nbins), 0);
    for (i64 v : values) counts[static_cast<size_t>(v / bin_width)]++;
    i64 cmax = 1;
    for (i64 c : counts) cmax = std::max(cmax, c);

    const double w = 640.0, h = 400.0, ml = 50.0, mb = 40.0, mt = 36.0, mr = 16.0;
    const double plot_w = w - ml - mr, plot_h = h - mt - mb;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + path);
    f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
    for (i64 b = 0; b < nbins; ++b) {
        double bh = plot_h * static_cast<double>(counts[static_cast<size_t>(b)]) /
                    static_cast<double>(cmax);
        double x = ml + plot_w * static_cast<double>(b) / static_cast<double>(nbins);
        double bw = plot_w / static_cast<double>(nbins) - 1.0;
        if (bw < 1.0) bw = 1.0;
        f << "<rect x=\"" << fmt2(x) << "\" y=\"" << fmt2(mt + plot_h - bh) << "\" width=\""
          << fmt2(bw) << "\" height=\"" << fmt2(bh) << "\" fill=\"#4878cf\"/>\n";
    }
    f << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w
      << "\" y2=\"" << mt + plot_h << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n";
    for (i64 b = 0; b <= nbins; b += std::max<i64>(1, nbins / 8)) {
        double x = ml + plot_w * static_cast<double>(b) / static_cast<double>(nbins);
        f << "<text x=\"" << fmt2(x) << "\" y=\"" << mt + plot_h + 16
          << "\" text-anchor=\"middle\" font-size=\"10\">" << b * bin_width << "</text>\n";
    }
    f << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << h - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">episode length (steps)</text>\n";
    f << "<text x=\"14\" y=\"" << mt + plot_h / 2
      << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 14 "
      << mt + plot_h / 2 << ")\">count (max " << cmax << ")</text>\n";
    f << "</svg>\n";
}

void write_lambda_energy_svg(const std::string& path, const std::vector<ScatterPoint>& points,
                             const std::string& title) {
    double emin = 0.0, emax = 1.0;
    i64 rmax = 0;
    if (!points.empty()) {
        emin = emax = points[0].energy;
        for (const auto& p : points) {
            emin = std::min(emin, p.energy);
            emax = std::max(emax, p.energy);
            rmax = std::max(rmax, p.replan_idx);
        }
        if (emax == emin) emax = emin + 1.0;
    }
    const double w = 640.0, h = 420.0, ml = 60.0, mb = 42.0, mt = 36.0, mr = 16.0;
    const double plot_w = w - ml - mr, plot_h = h - mt - mb;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + path);
    f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
    for (const auto& p : points) {
        double x = ml + plot_w * p.lambda;
        double y = mt + plot_h * (1.0 - (p.energy - emin) / (emax - emin));
        int shade = rmax > 0 ? static_cast<int>(200.0 * p.replan_idx / rmax) : 0;
        if (p.chosen)
            f << "<circle cx=\"" << fmt2(x) << "\" cy=\"" << fmt2(y)
              << "\" r=\"4\" fill=\"#d62728\"/>\n";
        else
            f << "<circle cx=\"" << fmt2(x) << "\" cy=\"" << fmt2(y) << "\" r=\"2\" fill=\"rgb("
              << shade << "," << shade << ",255)\" fill-opacity=\"0.6\"/>\n";
    }
    f << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w
      << "\" y2=\"" << mt + plot_h << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << h - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">lambda (time-to-reach)</text>\n";
    f << "<text x=\"16\" y=\"" << mt + plot_h / 2
      << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 16 "
      << mt + plot_h / 2 << ")\">energy [" << fmt2(emin) << ", " << fmt2(emax) << "]</text>\n";
    f << "</svg>\n";
}

}  // namespace pad::report

#include "sldb/train/sweep.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

namespace sldb {

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

std::string cell_name(std::size_t patch, double ratio) { return "p" + std::to_string(patch) + "_r" + shortest(ratio); }

}  // namespace

RunConfig sweep_cell_config(const RunConfig& base, std::size_t patch_size, double ratio) {
  RunConfig c = base;
  c.mask.mask_patch_size = patch_size;
  c.mask.ratio = ratio;
  c.mask_in_finetune = true;
  c.finetune_mask_patch_size = patch_size;
  c.finetune_mask_ratio = ratio;
  return c;
}

std::vector<SweepRow> run_mask_sweep(const RunConfig& base, const DatasetIndex& train, const DatasetIndex& test,
                                     const std::filesystem::path& out_dir, const SweepOptions& options) {
  std::vector<SweepRow> rows;
  for (auto patch : options.patch_sizes)
    for (double ratio : options.ratios) {
      SweepRow row;
      row.patch_size = patch;
      row.ratio = ratio;
      const auto start = std::chrono::steady_clock::now();
      try {
        const RunConfig cell = sweep_cell_config(base, patch, ratio);
        cell.validate();
        RunOptions run;
        run.out_dir = out_dir / cell_name(patch, ratio);
        run.test = &test;
        run.quiet = options.quiet;
        if (options.pretrain_epochs > 0) {
          RunConfig pre = cell;
          pre.epochs = options.pretrain_epochs;
          RunOptions pre_run;
          pre_run.out_dir = run.out_dir;
          pre_run.quiet = options.quiet;
          run.pretrained = run_pretrain(pre, train, pre_run).checkpoint;
        }
        row.accuracy = run_finetune(cell, train, run).test_metrics.accuracy;
      } catch (const std::exception& e) {
        row.accuracy = std::numeric_limits<double>::quiet_NaN();
        row.status = e.what();
        // Keep the table one record per line.
        for (auto& ch : row.status)
          if (ch == '\n' || ch == '\t') ch = ' ';
      }
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (!options.quiet)
        std::cerr << "sweep cell patch " << patch << " ratio " << ratio << ": " << row.status << "\n";
      rows.push_back(row);
    }
  return rows;
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::string out = "patch_size\tmask_ratio\taccuracy\twall_seconds\tstatus\n";
  for (const auto& r : rows)
    out += std::to_string(r.patch_size) + "\t" + shortest(r.ratio) + "\t" + shortest(r.accuracy) + "\t" +
           shortest(r.wall_seconds) + "\t" + r.status + "\n";
  return out;
}

std::vector<SweepRow> parse_sweep_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "patch_size\tmask_ratio\taccuracy\twall_seconds\tstatus")
    throw std::invalid_argument("sweep table: unexpected header");
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (int k = 0; k < 4; ++k) {
      const auto tab = line.find('\t', pos);
      if (tab == std::string::npos) throw std::invalid_argument("sweep table: short row '" + line + "'");
      f.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    SweepRow r;
    r.patch_size = static_cast<std::size_t>(parse_double(f[0]));
    r.ratio = parse_double(f[1]);
    r.accuracy = parse_double(f[2]);
    r.wall_seconds = parse_double(f[3]);
    r.status = line.substr(pos);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace sldb

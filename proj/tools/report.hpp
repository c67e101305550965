#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brainseg/container.hpp"
#include "brainseg/dataset.hpp"
#include "brainseg/metrics.hpp"
#include "brainseg/training.hpp"

namespace brainseg::report {

/// Per-epoch view of a train-seg log.
struct EpochRow {
  int epoch = 0;
  int phase = 1;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_dice;
  // Means over the epoch's steps.
  double ce = 0.0, dice = 0.0, sparsity = 0.0, size = 0.0, total = 0.0;
  std::optional<double> adv;
  int steps = 0;
};

std::vector<Json> read_jsonl(const std::filesystem::path& path);

/// Folds the step and epoch lines of stage "train_seg" into one row per epoch.
std::vector<EpochRow> training_curves(const std::vector<Json>& log);

/// First epoch whose phase is 2, if any.
std::optional<int> phase_boundary(const std::vector<EpochRow>& rows);

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Static line chart; `marker_x` draws a labelled vertical rule.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, std::optional<double> marker_x = std::nullopt,
                           const std::string& marker_label = "");

/// 8-bit grayscale PNG.
void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    const std::vector<std::uint8_t>& pixels);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_markdown(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);

/// Summary row: Dice, HD95 and LW Dice for WT, ET, TC, averaged over cases.
struct MetricsRow {
  std::string method;
  std::size_t cases = 0;
  std::array<double, 3> dice{}, hd95{}, lw_dice{};  // indexed WT, ET, TC
};
MetricsRow aggregate_metrics(const std::string& method, const std::vector<std::vector<LesionReport>>& cases);
std::string metrics_csv(const std::vector<MetricsRow>& rows);

/// Original | enhanced pairs for each modality of up to `max_subjects` volumes.
struct Grid {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};
Grid enhancement_grid(const std::vector<Volume>& volumes, const EnhanceParams& params, std::size_t max_subjects = 3);

/// Files written by `write_report`, relative to the report directory.
inline const std::vector<std::string> kReportFiles = {
    "curves.csv", "loss_curves.svg", "val_dice.svg", "sweep_table.csv", "sweep_table.md", "metrics.csv",
    "enhancement_grid.png"};

/// Builds run_dir/report from a completed train-seg run. Throws MissingArtifactError listing
/// every absent input.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir);

}  // namespace brainseg::report

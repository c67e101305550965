#include "report.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "brainseg/config.hpp"
#include "brainseg/volume_io.hpp"

namespace brainseg::report {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write '" + p.string() + "'");
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

// 1-2-5 tick spacing giving roughly `n` intervals.
double nice_step(double span, int n) {
  if (!(span > 0.0)) return 1.0;
  const double raw = span / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return mag * (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0);
}

}  // namespace

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot read '" + path.string() + "'");
  std::vector<Json> out;
  int n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception&) {
      throw IngestionError(path.string() + ":" + std::to_string(n) + ": not a JSON object");
    }
  }
  return out;
}

std::vector<EpochRow> training_curves(const std::vector<Json>& log) {
  std::map<int, EpochRow> rows;
  std::map<int, int> adv_steps;
  for (const auto& j : log) {
    if (j.value("stage", std::string()) != "train_seg") continue;
    const int e = j.at("epoch").get<int>();
    EpochRow& r = rows[e];
    r.epoch = e;
    r.phase = j.value("phase", r.phase);
    r.lr = j.value("lr", r.lr);
    const std::string type = j.value("type", std::string());
    if (type == "step") {
      const Json& l = j.at("losses");
      r.ce += l.at("ce").get<double>();
      r.dice += l.at("dice").get<double>();
      r.sparsity += l.at("sparsity").get<double>();
      r.size += l.at("size").get<double>();
      r.total += l.at("total").get<double>();
      if (l.contains("adv") && l.at("adv").is_number()) {
        r.adv = r.adv.value_or(0.0) + l.at("adv").get<double>();
        ++adv_steps[e];
      }
      ++r.steps;
    } else if (type == "epoch") {
      r.train_loss = j.at("train_loss").get<double>();
      if (j.contains("val_dice") && j.at("val_dice").is_number()) r.val_dice = j.at("val_dice").get<double>();
    }
  }
  std::vector<EpochRow> out;
  for (auto& [e, r] : rows) {
    if (r.steps > 0) {
      const double n = r.steps;
      r.ce /= n;
      r.dice /= n;
      r.sparsity /= n;
      r.size /= n;
      r.total /= n;
      if (r.adv) *r.adv /= double(adv_steps[e]);
    }
    out.push_back(r);
  }
  return out;
}

std::optional<int> phase_boundary(const std::vector<EpochRow>& rows) {
  for (const auto& r : rows)
    if (r.phase == 2) return r.epoch;
  return std::nullopt;
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, std::optional<double> marker_x,
                           const std::string& marker_label) {
  constexpr double W = 720, H = 420, L = 70, R = 150, T = 40, B = 55;
  const double pw = W - L - R, ph = H - T - B;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (marker_x) {
    x0 = std::min(x0, *marker_x);
    x1 = std::max(x1, *marker_x);
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double ys = nice_step(y1 - y0, 5);
  y0 = std::floor(y0 / ys) * ys;
  y1 = std::ceil(y1 / ys) * ys;
  const double xs = nice_step(x1 - x0, 8);
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  for (double y = y0; y <= y1 + ys * 1e-9; y += ys) {
    o << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << fmt(py(y)) << "\" y2=\"" << fmt(py(y))
      << "\" stroke=\"#e0e0e0\"/>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(y) + 4) << "\" text-anchor=\"end\">" << fmt(y, 4) << "</text>\n";
  }
  for (double x = std::ceil(x0 / xs) * xs; x <= x1 + xs * 1e-9; x += xs)
    o << "<text x=\"" << fmt(px(x)) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << fmt(x, 4)
      << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
    << "</text>\n";
  o << "<text transform=\"translate(18," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(y_label) << "</text>\n";
  if (marker_x) {
    o << "<line class=\"phase-boundary\" data-x=\"" << fmt(*marker_x) << "\" x1=\"" << fmt(px(*marker_x)) << "\" x2=\""
      << fmt(px(*marker_x)) << "\" y1=\"" << T << "\" y2=\"" << T + ph
      << "\" stroke=\"#555\" stroke-dasharray=\"5,4\"/>\n";
    o << "<text x=\"" << fmt(px(*marker_x) + 4) << "\" y=\"" << T + 14 << "\" fill=\"#555\">" << xml_escape(marker_label)
      << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* col = palette[k % 7];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      pts += (pts.empty() ? "" : " ") + fmt(px(s.x[i])) + "," + fmt(py(s.y[i]));
    }
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.8\" points=\"" << pts << "\"/>\n";
    const double ly = T + 10 + 18 * double(k);
    o << "<line x1=\"" << L + pw + 12 << "\" x2=\"" << L + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_png_gray(const fs::path& path, std::size_t width, std::size_t height, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) throw ShapeError("png: pixel count does not match the image size");
  FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw DataError("png: failed writing '" + path.string() + "'");
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < height; ++r) png_write_row(png, pixels.data() + r * width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "threshold,accuracy,sensitivity,tp,fn,fp,tn\n";
  for (const auto& r : rows)
    s += detail::format_double(r.threshold) + "," + fixed(r.accuracy, 6) + "," +
         (r.sensitivity ? fixed(*r.sensitivity, 6) : std::string("")) + "," + std::to_string(r.tp) + "," +
         std::to_string(r.fn) + "," + std::to_string(r.fp) + "," + std::to_string(r.tn) + "\n";
  return s;
}

std::string sweep_markdown(const std::vector<SweepRow>& rows) {
  std::string s = "| Threshold | Accuracy | Sensitivity | TP | FN | FP |\n|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    s += "| " + detail::format_double(r.threshold) + " | " + fixed(r.accuracy, 4) + " | " +
         (r.sensitivity ? fixed(*r.sensitivity, 4) : std::string("n/a")) + " | " + std::to_string(r.tp) + " | " +
         std::to_string(r.fn) + " | " + std::to_string(r.fp) + " |\n";
  return s;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != "threshold,accuracy,sensitivity,tp,fn,fp,tn") throw IngestionError("sweep.csv: bad header");
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string item; std::getline(ss, item, ',');) f.push_back(detail::trim(item));
    if (f.size() == 6) f.push_back("");
    if (f.size() != 7) throw IngestionError("sweep.csv: expected 7 fields");
    SweepRow r;
    r.threshold = detail::parse_number<double>("threshold", f[0]);
    r.accuracy = detail::parse_number<double>("accuracy", f[1]);
    if (!f[2].empty()) r.sensitivity = detail::parse_number<double>("sensitivity", f[2]);
    r.tp = detail::parse_number<std::size_t>("tp", f[3]);
    r.fn = detail::parse_number<std::size_t>("fn", f[4]);
    r.fp = detail::parse_number<std::size_t>("fp", f[5]);
    r.tn = detail::parse_number<std::size_t>("tn", f[6]);
    rows.push_back(r);
  }
  return rows;
}

MetricsRow aggregate_metrics(const std::string& method, const std::vector<std::vector<LesionReport>>& cases) {
  MetricsRow row;
  row.method = method;
  row.cases = cases.size();
  if (cases.empty()) return row;
  static const std::array<const char*, 3> order = {"WT", "ET", "TC"};
  for (const auto& regions : cases)
    for (std::size_t k = 0; k < 3; ++k) {
      auto it = std::find_if(regions.begin(), regions.end(), [&](const LesionReport& r) { return r.region == order[k]; });
      if (it == regions.end()) throw IngestionError(std::string("metrics: case lacks region ") + order[k]);
      row.dice[k] += it->dice;
      row.hd95[k] += it->hd95;
      row.lw_dice[k] += it->lw_dice;
    }
  for (std::size_t k = 0; k < 3; ++k) {
    row.dice[k] /= double(cases.size());
    row.hd95[k] /= double(cases.size());
    row.lw_dice[k] /= double(cases.size());
  }
  return row;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = "method,cases,dice_wt,dice_et,dice_tc,hd95_wt,hd95_et,hd95_tc,lw_dice_wt,lw_dice_et,lw_dice_tc\n";
  for (const auto& r : rows) {
    s += r.method + "," + std::to_string(r.cases);
    for (double v : r.dice) s += "," + fixed(v, 6);
    for (double v : r.hd95) s += "," + fixed(v, 6);
    for (double v : r.lw_dice) s += "," + fixed(v, 6);
    s += "\n";
  }
  return s;
}

Grid enhancement_grid(const std::vector<Volume>& volumes, const EnhanceParams& params, std::size_t max_subjects) {
  if (volumes.empty()) throw MissingArtifactError("enhancement grid: no volumes");
  const std::size_t n = std::min(max_subjects, volumes.size());
  const std::size_t H = volumes[0].height(), Wd = volumes[0].width(), gap = 2;
  Grid g;
  g.width = kModalities * 2 * (Wd + gap) + gap;
  g.height = n * (H + gap) + gap;
  g.pixels.assign(g.width * g.height, 255);
  for (std::size_t s = 0; s < n; ++s) {
    const Volume& v = volumes[s];
    if (v.height() != H || v.width() != Wd) throw ShapeError("enhancement grid: volumes differ in size");
    const std::size_t mid = v.slices() / 2;
    const Volume plain = normalize_volume(v, params, false), enh = normalize_volume(v, params, true);
    for (std::size_t m = 0; m < kModalities; ++m)
      for (int side = 0; side < 2; ++side) {
        const Volume& src = side == 0 ? plain : enh;
        const float* p = src.modalities.data() + (m * v.slices() + mid) * H * Wd;
        const std::size_t c0 = gap + (m * 2 + std::size_t(side)) * (Wd + gap), r0 = gap + s * (H + gap);
        for (std::size_t r = 0; r < H; ++r)
          for (std::size_t c = 0; c < Wd; ++c) {
            const double u = std::clamp((double(p[r * Wd + c]) + 1.0) / 2.0, 0.0, 1.0);
            g.pixels[(r0 + r) * g.width + c0 + c] = std::uint8_t(std::lround(u * 255.0));
          }
      }
  }
  return g;
}

std::vector<fs::path> write_report(const fs::path& run_dir) {
  const fs::path log = run_dir / "train_log.jsonl", cfg = run_dir / "config.txt", summary = run_dir / "summary.json",
                 sweep = run_dir / "sweep.csv", metrics = run_dir / "eval" / "metrics.csv";
  std::vector<std::string> missing;
  for (const auto& p : {log, cfg, summary, sweep, metrics})
    if (!fs::is_regular_file(p)) missing.push_back(fs::relative(p, run_dir).string());
  Json sum;
  if (fs::is_regular_file(summary)) {
    sum = Json::parse(read_text(summary), nullptr, false);
    if (sum.is_discarded() || !sum.contains("data")) missing.push_back("summary.json: data directory entry");
  }
  if (!missing.empty()) {
    std::string msg = "incomplete run directory '" + run_dir.string() + "'; missing:";
    for (const auto& m : missing) msg += " " + m;
    throw MissingArtifactError(msg);
  }

  RunConfig rc;
  apply_config_file(rc, cfg);
  fs::path data_dir = sum.at("data").get<std::string>();
  if (data_dir.is_relative()) data_dir = run_dir / data_dir;
  std::vector<Volume> vols;
  if (fs::is_directory(data_dir / "tumor")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(data_dir / "tumor"))
      if (e.path().extension() == ".bsr") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < std::min<std::size_t>(3, files.size()); ++i) vols.push_back(load_volume(files[i]));
  }
  if (vols.empty()) throw MissingArtifactError("no tumor volumes under '" + (data_dir / "tumor").string() + "'");

  const fs::path out = run_dir / "report";
  fs::create_directories(out);

  const auto rows = training_curves(read_jsonl(log));
  if (rows.empty()) throw MissingArtifactError("train_log.jsonl has no train_seg entries");
  std::string csv = "epoch,phase,lr,train_loss,val_dice,ce,dice,sparsity,size,adv,total,steps\n";
  Series ce{"ce", {}, {}}, dice{"dice", {}, {}}, sp{"sparsity", {}, {}}, sz{"size", {}, {}}, adv{"adv", {}, {}},
      tot{"total", {}, {}}, vd{"val dice", {}, {}};
  for (const auto& r : rows) {
    csv += std::to_string(r.epoch) + "," + std::to_string(r.phase) + "," + fmt(r.lr, 17) + "," + fmt(r.train_loss, 10) +
           "," + (r.val_dice ? fmt(*r.val_dice, 10) : "") + "," + fmt(r.ce, 10) + "," + fmt(r.dice, 10) + "," +
           fmt(r.sparsity, 10) + "," + fmt(r.size, 10) + "," + (r.adv ? fmt(*r.adv, 10) : "") + "," + fmt(r.total, 10) +
           "," + std::to_string(r.steps) + "\n";
    const double e = r.epoch;
    for (auto* s : {&ce, &dice, &sp, &sz, &tot}) s->x.push_back(e);
    ce.y.push_back(r.ce);
    dice.y.push_back(r.dice);
    sp.y.push_back(r.sparsity);
    sz.y.push_back(r.size);
    tot.y.push_back(r.total);
    if (r.adv) {
      adv.x.push_back(e);
      adv.y.push_back(*r.adv);
    }
    if (r.val_dice) {
      vd.x.push_back(e);
      vd.y.push_back(*r.val_dice);
    }
  }
  write_text(out / "curves.csv", csv);

  const auto boundary = phase_boundary(rows);
  std::vector<Series> losses = {ce, dice, sp, sz};
  if (!adv.x.empty()) losses.push_back(adv);
  losses.push_back(tot);
  const std::optional<double> mx = boundary ? std::optional<double>(*boundary) : std::nullopt;
  const std::string mlabel = boundary ? "phase 2 from epoch " + std::to_string(*boundary) : "";
  write_text(out / "loss_curves.svg", svg_line_chart("Training losses (epoch means)", "epoch", "loss", losses, mx, mlabel));
  write_text(out / "val_dice.svg",
             svg_line_chart("Validation whole-tumor soft Dice", "epoch", "Dice", {vd}, mx, mlabel));

  const auto sweep_rows = parse_sweep_csv(read_text(sweep));
  write_text(out / "sweep_table.csv", sweep_csv(sweep_rows));
  write_text(out / "sweep_table.md", sweep_markdown(sweep_rows));
  write_text(out / "metrics.csv", read_text(metrics));

  const Grid g = enhancement_grid(vols, rc.enhance);
  write_png_gray(out / "enhancement_grid.png", g.width, g.height, g.pixels);

  std::string manifest;
  std::vector<fs::path> written;
  for (const auto& f : kReportFiles) {
    manifest += f + "\n";
    written.push_back(out / f);
  }
  write_text(out / "MANIFEST", manifest);
  written.push_back(out / "MANIFEST");
  return written;
}

}  // namespace brainseg::report

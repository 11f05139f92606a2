#include "dettoy/report.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dettoy/error.hpp"
#include "dettoy/svg_plot.hpp"

namespace dettoy {

namespace fs = std::filesystem;

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

nlohmann::json to_json(const DatasetEval& eval) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : eval.per_class) {
    classes.push_back({{"class_id", c.class_id},
                       {"instance_count", c.instance_count},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"giou_sum", c.giou_sum},
                       {"giou_count", c.giou_count}});
  }
  return {{"mgiou", eval.mgiou},
          {"weighted_f1", eval.weighted_f1},
          {"num_images", eval.num_images},
          {"per_class", classes}};
}

DatasetEval dataset_eval_from_json(const nlohmann::json& doc) {
  try {
    DatasetEval e;
    e.mgiou = doc.at("mgiou").get<double>();
    e.weighted_f1 = doc.at("weighted_f1").get<double>();
    e.num_images = doc.at("num_images").get<long>();
    for (const auto& c : doc.at("per_class")) {
      ClassStats s;
      s.class_id = c.at("class_id").get<int>();
      s.instance_count = c.at("instance_count").get<long>();
      s.tp = c.at("tp").get<long>();
      s.fp = c.at("fp").get<long>();
      s.fn = c.at("fn").get<long>();
      s.giou_sum = c.at("giou_sum").get<double>();
      s.giou_count = c.at("giou_count").get<long>();
      e.per_class.push_back(s);
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("evaluation record: ") + ex.what());
  }
}

namespace {

std::string scope_of(const std::optional<int>& block) {
  return block ? "single_block" : "all_blocks";
}

std::string block_of(const std::optional<int>& block) {
  return block ? std::to_string(*block) : "";
}

std::string cell_prefix(Component c, const std::optional<int>& block, double pct) {
  return to_string(c) + "," + scope_of(block) + "," + block_of(block) + "," + format_real(pct);
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& header) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << header << '\n';
  }
  void row(const std::string& line) { out_ << line << '\n'; }
  ~CsvWriter() noexcept(false) {
    out_.flush();
    if (!out_ && std::uncaught_exceptions() == 0) throw IoError("failed writing " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

template <typename... Ts>
std::string join(const Ts&... parts) {
  std::string s;
  ((s += (s.empty() ? "" : ","), s += parts), ...);
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_plots(const SweepResult& result, const fs::path& dir) {
  std::vector<Component> seen;
  for (const auto& cell : result.cells) {
    if (std::find(seen.begin(), seen.end(), cell.component) == seen.end()) {
      seen.push_back(cell.component);
    }
  }
  const bool full = result.mode == SweepMode::Full;
  for (Component c : seen) {
    PlotSeries giou{"mgIoU", {}, {}, {}, false, Marker::Dot, "#1f77b4"};
    PlotSeries f1{"F1", {}, {}, {}, true, Marker::Cross, "#d62728"};
    for (const auto& cell : result.cells) {
      if (cell.component != c || cell.error) continue;
      const double x = full ? 100.0 * cell.percentage : static_cast<double>(cell.block.value_or(0));
      giou.x.push_back(x);
      giou.y.push_back(cell.mean_delta_mgiou);
      giou.spread.push_back(cell.std_delta_mgiou);
      f1.x.push_back(x);
      f1.y.push_back(cell.mean_delta_f1);
      f1.spread.push_back(cell.std_delta_f1);
    }
    LinePlot plot;
    plot.title = to_string(c) + (full ? " (all blocks)" : " (one block at a time)");
    plot.x_label = full ? "ablated share [%]" : "block index";
    plot.y_label = "delta [percentage points]";
    plot.series = {giou, f1};
    write_text(dir / "plots" / (to_string(result.mode) + "_" + to_string(c) + ".svg"),
               render_svg(plot));
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(where + ": bad number '" + s + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(const std::string& s, const std::string& where) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(where + ": bad integer '" + s + "'");
  }
  return v;
}

std::optional<int> parse_scope(const std::string& scope, const std::string& block,
                               const std::string& where) {
  if (scope == "all_blocks") return std::nullopt;
  if (scope == "single_block") return parse_int<int>(block, where);
  throw ParseError(where + ": unknown scope '" + scope + "'");
}

/// Reads a CSV file, checking the header and the field count of every row.
std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ParseError(path.string() + ": unexpected header");
  }
  const std::size_t width = split(header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != width) {
      throw ParseError(path.string() + ": line " + std::to_string(rows.size() + 2) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(width));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

constexpr const char* kConfigsHeader =
    "component,scope,block_index,ablation_pct,config_index,seed,subunits,mgiou,f1,delta_mgiou,"
    "delta_f1";
constexpr const char* kConfigClassesHeader =
    "component,scope,block_index,ablation_pct,config_index,class_id,instance_count,f1,mgiou";
constexpr const char* kPerClassHeader =
    "component,scope,block_index,ablation_pct,class_id,instance_count,baseline_f1,"
    "baseline_mgiou,mean_delta_f1,std_delta_f1,mean_delta_mgiou,std_delta_mgiou";
constexpr const char* kVarianceHeader =
    "component,scope,block_index,ablation_pct,sample_size,std_delta_mgiou,std_delta_f1";

}  // namespace

void emit_report(const SweepResult& result, const fs::path& dir,
                 std::span<const int> variance_sizes) {
  if (result.cells.empty()) throw InvalidArgument("refusing to report a sweep without cells");
  std::error_code ec;
  fs::create_directories(dir / "plots", ec);
  if (ec) throw IoError("cannot create " + (dir / "plots").string() + ": " + ec.message());

  {
    CsvWriter out(dir / "summary.csv", kSummaryHeader);
    for (const auto& c : result.cells) {
      if (c.error) continue;
      out.row(join(cell_prefix(c.component, c.block, c.percentage), std::to_string(c.n_configs),
                   format_real(c.baseline_mgiou), format_real(c.baseline_f1),
                   format_real(c.mean_delta_mgiou), format_real(c.std_delta_mgiou),
                   format_real(c.mean_delta_f1), format_real(c.std_delta_f1)));
    }
  }
  {
    CsvWriter out(dir / "failed_cells.csv", "component,scope,block_index,ablation_pct,error");
    for (const auto& c : result.cells) {
      if (!c.error) continue;
      std::string msg = *c.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out.row(join(cell_prefix(c.component, c.block, c.percentage), msg));
    }
  }
  {
    CsvWriter out(dir / "per_class.csv", kPerClassHeader);
    for (const auto& c : result.cells) {
      for (const auto& k : c.per_class) {
        out.row(join(cell_prefix(c.component, c.block, c.percentage), std::to_string(k.class_id),
                     std::to_string(k.instance_count), format_real(k.baseline_f1),
                     format_real(k.baseline_mgiou), format_real(k.mean_delta_f1),
                     format_real(k.std_delta_f1), format_real(k.mean_delta_mgiou),
                     format_real(k.std_delta_mgiou)));
      }
    }
  }
  {
    CsvWriter configs(dir / "configs.csv", kConfigsHeader);
    CsvWriter classes(dir / "config_classes.csv", kConfigClassesHeader);
    for (const auto& r : result.rows) {
      const std::string prefix = cell_prefix(r.component, r.block, r.percentage);
      configs.row(join(prefix, std::to_string(r.config_index), std::to_string(r.seed),
                       std::to_string(r.subunits), format_real(r.mgiou), format_real(r.f1),
                       format_real(r.delta_mgiou), format_real(r.delta_f1)));
      for (const auto& k : r.per_class) {
        classes.row(join(prefix, std::to_string(r.config_index), std::to_string(k.class_id),
                         std::to_string(k.instance_count), format_real(k.f1),
                         format_real(k.mgiou)));
      }
    }
  }
  if (!variance_sizes.empty()) {
    CsvWriter out(dir / "variance.csv", kVarianceHeader);
    for (const auto& v : variance_curve(result, variance_sizes)) {
      out.row(join(cell_prefix(v.component, v.block, v.percentage), std::to_string(v.sample_size),
                   format_real(v.std_mgiou), format_real(v.std_f1)));
    }
  }
  write_text(dir / "sweep.json",
             nlohmann::json{{"mode", to_string(result.mode)}, {"baseline", to_json(result.baseline)}}
                     .dump(2) +
                 "\n");
  write_plots(result, dir);
}

SweepResult load_sweep_result(const fs::path& dir) {
  SweepResult result;
  {
    std::ifstream in(dir / "sweep.json");
    if (!in) throw IoError("cannot open " + (dir / "sweep.json").string());
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
      result.mode = sweep_mode_from_string(doc.at("mode").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("sweep.json: " + std::string(e.what()));
    }
    result.baseline = dataset_eval_from_json(doc.at("baseline"));
  }
  const auto configs = read_csv(dir / "configs.csv", kConfigsHeader);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& f = configs[i];
    const std::string where = "configs.csv row " + std::to_string(i + 1);
    ConfigRow r;
    r.component = component_from_string(f[0]);
    r.block = parse_scope(f[1], f[2], where);
    r.percentage = parse_real(f[3], where);
    r.config_index = parse_int<int>(f[4], where);
    r.seed = parse_int<std::uint64_t>(f[5], where);
    r.subunits = parse_int<std::size_t>(f[6], where);
    r.mgiou = parse_real(f[7], where);
    r.f1 = parse_real(f[8], where);
    r.delta_mgiou = parse_real(f[9], where);
    r.delta_f1 = parse_real(f[10], where);
    result.rows.push_back(std::move(r));
  }
  const auto classes = read_csv(dir / "config_classes.csv", kConfigClassesHeader);
  const std::size_t k = result.baseline.per_class.size();
  if (classes.size() != k * result.rows.size()) {
    throw ParseError("config_classes.csv: expected " + std::to_string(k) + " rows per config");
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& f = classes[i];
    const std::string where = "config_classes.csv row " + std::to_string(i + 1);
    ConfigRow& r = result.rows[i / k];
    if (parse_int<int>(f[4], where) != r.config_index) {
      throw ParseError(where + ": out of step with configs.csv");
    }
    r.per_class.push_back({parse_int<int>(f[5], where), parse_int<long>(f[6], where),
                           parse_real(f[7], where), parse_real(f[8], where)});
  }
  result.cells = aggregate(result.rows, result.baseline);
  return result;
}

std::vector<SweepCell> load_summary(const fs::path& path) {
  std::vector<SweepCell> cells;
  const auto rows = read_csv(path, kSummaryHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    const std::string where = path.filename().string() + " row " + std::to_string(i + 1);
    SweepCell c;
    c.component = component_from_string(f[0]);
    c.block = parse_scope(f[1], f[2], where);
    c.percentage = parse_real(f[3], where);
    c.n_configs = parse_int<int>(f[4], where);
    c.baseline_mgiou = parse_real(f[5], where);
    c.baseline_f1 = parse_real(f[6], where);
    c.mean_delta_mgiou = parse_real(f[7], where);
    c.std_delta_mgiou = parse_real(f[8], where);
    c.mean_delta_f1 = parse_real(f[9], where);
    c.std_delta_f1 = parse_real(f[10], where);
    cells.push_back(std::move(c));
  }
  return cells;
}

}  // namespace dettoy

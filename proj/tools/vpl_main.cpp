// Unified command-line entry point.
//
// Exit codes: 0 success, 2 validation error (bad flags, configs, files),
// 3 numerical failure (failed gradient checks, non-finite training loss).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "vpl/data.hpp"
#include "vpl/gradcheck.hpp"
#include "vpl/metrics.hpp"
#include "vpl/plot.hpp"
#include "vpl/renderer.hpp"
#include "vpl/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vpl;

namespace {

// ------------------------------------------------------------ run manifest

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

// Written atomically (tmp file + rename) at the start of every subcommand.
void write_manifest(fs::path dir, const std::string& command,
                    const json& config, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  json m;
  m["command"] = command;
  m["config"] = config;
  m["config_hash"] = fnv1a_hex(config.dump());
  m["seed"] = seed;
  m["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch()).count();
  m["outputs"] = outputs;
  const fs::path tmp = dir / ".run_manifest.json.tmp";
  const fs::path dst = dir / "run_manifest.json";
  std::ofstream f(tmp);
  if (!f) throw Error("cannot write " + tmp.string());
  f << m.dump(2) << "\n";
  f.close();
  fs::rename(tmp, dst);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

// ------------------------------------------------------------- csv parsing

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_num(const std::string& s, const std::string& path, int lineno) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw Error(path + " line " + std::to_string(lineno) +
                ": not a number: '" + s + "'");
  }
}

struct LogData {
  std::vector<double> step, loss_s, loss_c, loss_d, volume;
};

LogData parse_log_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  int lineno = 0;
  LogData d;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (lineno == 1) {
      if (cells.empty() || cells[0] != "step")
        throw Error(path + " line 1: expected header starting with 'step'");
      continue;
    }
    if (cells.size() != 6)
      throw Error(path + " line " + std::to_string(lineno) + ": expected 6 " +
                  "columns, got " + std::to_string(cells.size()));
    d.step.push_back(parse_num(cells[0], path, lineno));
    d.loss_s.push_back(parse_num(cells[1], path, lineno));
    d.loss_c.push_back(parse_num(cells[2], path, lineno));
    d.loss_d.push_back(parse_num(cells[3], path, lineno));
    d.volume.push_back(parse_num(cells[4], path, lineno));
  }
  if (d.step.empty()) throw Error(path + ": no data rows");
  return d;
}

struct EvalData {
  std::vector<std::string> classes;  // excluding `all`
  std::vector<std::array<double, 5>> rows;  // iou, cd_s, cd_v, emd_s, emd_v
  std::array<double, 5> all{};
  bool has_all = false;
};

EvalData parse_eval_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  int lineno = 0;
  bool seen_header = false;
  EvalData d;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (!seen_header) {
      if (cells.size() != 6 || cells[0] != "class")
        throw Error(path + " line " + std::to_string(lineno) +
                    ": expected header 'class,iou,cd_s,cd_v,emd_s,emd_v'");
      seen_header = true;
      continue;
    }
    if (cells.size() != 6)
      throw Error(path + " line " + std::to_string(lineno) + ": expected 6 " +
                  "columns, got " + std::to_string(cells.size()));
    std::array<double, 5> vals;
    for (int i = 0; i < 5; ++i)
      vals[std::size_t(i)] = parse_num(cells[std::size_t(i) + 1], path,
                                       lineno);
    if (cells[0] == "all") {
      d.all = vals;
      d.has_all = true;
    } else {
      d.classes.push_back(cells[0]);
      d.rows.push_back(vals);
    }
  }
  if (!seen_header) throw Error(path + ": missing header row");
  if (d.classes.empty()) throw Error(path + ": no class rows");
  return d;
}

// -------------------------------------------------------------- subcommands

int cmd_make_dataset(const data::SynthOptions& opts, const std::string& out) {
  json cfg;
  cfg["seed"] = opts.seed;
  cfg["objects"] = opts.n_objects;
  cfg["views"] = opts.n_views;
  cfg["classes"] = opts.classes;
  cfg["size"] = opts.size;
  cfg["first_az_min"] = opts.first_view_az_min;
  cfg["first_az_max"] = opts.first_view_az_max;
  write_manifest(out, "make-dataset", cfg, opts.seed, {out});
  data::synth_primitives(out, opts);
  std::cout << "wrote " << opts.n_objects << " objects x " << opts.n_views
            << " views to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  json j = read_json_file(config_path);
  train::TrainConfig cfg = train::TrainConfig::from_json(j);
  if (cfg.out_dir.empty()) throw Error("config: out_dir is required");
  write_manifest(cfg.out_dir, "train", cfg.to_json(), cfg.seed,
                 {cfg.out_dir + "/log.csv"});
  std::string final_ckpt = train::run_training(cfg);
  std::cout << "final checkpoint: " << final_ckpt << "\n";
  return 0;
}

train::Trainer trainer_from_checkpoint(const std::string& ckpt,
                                       const std::string& dataset) {
  json header = nn::read_checkpoint_header(ckpt);
  if (!header.contains("config"))
    throw Error("checkpoint " + ckpt + ": missing config header");
  train::TrainConfig cfg = train::TrainConfig::from_json(header.at("config"));
  data::Dataset ds = data::load_dataset(dataset);
  train::Trainer tr(cfg, std::move(ds));
  tr.load(ckpt);
  return tr;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset,
             const std::string& out_csv, std::uint64_t seed, int points,
             int voxel_r) {
  write_manifest(fs::path(out_csv).parent_path(), "eval",
                 {{"checkpoint", ckpt}, {"dataset", dataset},
                  {"points", points}, {"voxel_r", voxel_r}},
                 seed, {out_csv});
  train::Trainer tr = trainer_from_checkpoint(ckpt, dataset);
  std::vector<metrics::EvalSample> samples;
  for (const auto& obj : tr.dataset().objects) {
    if (!obj.gt_mesh)
      throw Error("eval: object " + obj.id + " has no ground-truth mesh");
    const int view = obj.designated_view >= 0 ? obj.designated_view : 0;
    metrics::EvalSample s;
    s.pred = tr.reconstruct(obj.views[std::size_t(view)]);
    s.gt = *obj.gt_mesh;
    s.cls = tr.dataset().class_names[std::size_t(obj.class_label)];
    s.id = obj.id;
    samples.push_back(std::move(s));
  }
  metrics::EvalOptions opts;
  opts.seed = seed;
  opts.n_surface = points;
  opts.n_volume = points;
  opts.voxel_r = voxel_r;
  auto rows = metrics::evaluate_meshes(samples, opts);
  metrics::write_eval_csv(out_csv, rows);
  for (const auto& r : rows)
    std::printf("%-12s iou %.4f cd_s %.4f emd_s %.4f (n=%d)\n", r.cls.c_str(),
                r.iou, r.cd_s, r.emd_s, r.n);
  return 0;
}

int cmd_render_mesh(const std::string& mesh_path, double az, double el,
                    double dist, int size, double fov,
                    const std::string& out) {
  Mesh m = load_obj(mesh_path);
  Camera cam = Camera::make(Viewpoint::make(az, el, dist), fov, size);
  save_render_png(out, rasterize(m, cam));
  return 0;
}

int cmd_render_ckpt(const std::string& ckpt, const std::string& dataset,
                    int rows, const std::string& out) {
  train::Trainer tr = trainer_from_checkpoint(ckpt, dataset);
  tr.write_render_grid(out, rows);
  return 0;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed,
                  const std::string& csv, bool corrupt) {
  std::vector<checks::CheckResult> results;
  auto append = [&](std::vector<checks::CheckResult> r) {
    for (auto& x : r) results.push_back(std::move(x));
  };
  if (scope == "renderer" || scope == "all")
    append(checks::run_renderer_checks(seed));
  if (scope == "nn" || scope == "all")
    append(checks::run_nn_checks(seed, 100, corrupt));
  if (scope == "losses" || scope == "all")
    append(checks::run_losses_checks(seed));
  if (results.empty())
    throw Error("gradcheck: unknown scope '" + scope +
                "' (want renderer|nn|losses|all)");

  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw Error("cannot write " + csv);
    f << "check,max_err,tol,pass\n";
    f.precision(17);
    for (const auto& r : results)
      f << r.name << ',' << r.max_err << ',' << r.tol << ','
        << (r.pass ? 1 : 0) << '\n';
  }
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-40s %s  max_err %.3e  tol %.3e\n", r.name.c_str(),
                r.pass ? "pass" : "FAIL", r.max_err, r.tol);
    ok = ok && r.pass;
  }
  if (!ok) {
    for (const auto& r : results)
      if (!r.pass)
        std::fprintf(stderr, "gradcheck failure: %s\n", r.name.c_str());
    return 3;
  }
  return 0;
}

int cmd_report(const std::string& log_path,
               const std::vector<std::string>& eval_paths,
               const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_manifest(out_dir, "report",
                 {{"log", log_path}, {"eval", eval_paths}}, 0,
                 {out_dir + "/summary.txt"});
  LogData log = parse_log_csv(log_path);

  std::vector<plot::Series> curves;
  curves.push_back({"loss_s", log.step, log.loss_s});
  curves.push_back({"loss_c", log.step, log.loss_c});
  curves.push_back({"loss_d", log.step, log.loss_d});
  plot::line_plot((fs::path(out_dir) / "loss_curves.png").string(), curves);
  plot::line_plot((fs::path(out_dir) / "volume.png").string(),
                  {{"volume_mean", log.step, log.volume}});

  std::vector<EvalData> evals;
  for (const auto& p : eval_paths) evals.push_back(parse_eval_csv(p));

  std::ofstream sum(fs::path(out_dir) / "summary.txt");
  if (!sum) throw Error("cannot write summary.txt in " + out_dir);
  sum.precision(6);
  sum << "training: " << log.step.size() << " logged steps, final step "
      << log.step.back() << "\n";
  sum << "  final loss_s " << log.loss_s.back() << ", loss_c "
      << log.loss_c.back() << ", loss_d " << log.loss_d.back() << ", volume "
      << log.volume.back() << "\n\n";

  if (!evals.empty()) {
    // grouped per-class IoU bars, one group per eval file
    std::vector<plot::BarGroup> groups;
    for (std::size_t e = 0; e < evals.size(); ++e) {
      if (evals[e].classes != evals[0].classes)
        throw Error(eval_paths[e] + ": class set differs from " +
                    eval_paths[0]);
      plot::BarGroup g;
      g.name = eval_paths[e];
      for (const auto& row : evals[e].rows) g.values.push_back(row[0]);
      groups.push_back(std::move(g));
    }
    plot::bar_chart((fs::path(out_dir) / "iou_bars.png").string(),
                    evals[0].classes, groups);

    for (std::size_t e = 0; e < evals.size(); ++e) {
      const EvalData& d = evals[e];
      sum << "eval " << eval_paths[e] << "\n";
      sum << "  class         iou      cd_s     cd_v     emd_s    emd_v";
      if (e > 0) sum << "   d_iou_vs_first";
      sum << "\n";
      std::array<double, 5> mean{};
      for (std::size_t i = 0; i < d.rows.size(); ++i) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "  %-12s %8.4f %8.4f %8.4f %8.4f %8.4f",
                      d.classes[i].c_str(), d.rows[i][0], d.rows[i][1],
                      d.rows[i][2], d.rows[i][3], d.rows[i][4]);
        sum << buf;
        if (e > 0) {
          std::snprintf(buf, sizeof buf, "  %+8.4f",
                        d.rows[i][0] - evals[0].rows[i][0]);
          sum << buf;
        }
        sum << "\n";
        for (int k = 0; k < 5; ++k) mean[std::size_t(k)] += d.rows[i][k];
      }
      for (int k = 0; k < 5; ++k) mean[std::size_t(k)] /= double(d.rows.size());
      if (d.has_all) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "  %-12s %8.4f %8.4f %8.4f %8.4f %8.4f", "all",
                      d.all[0], d.all[1], d.all[2], d.all[3], d.all[4]);
        sum << buf;
        if (e > 0) {
          std::snprintf(buf, sizeof buf, "  %+8.4f",
                        d.all[0] - evals[0].all[0]);
          sum << buf;
        }
        sum << "\n";
        const bool audit_ok = mean == d.all;
        sum << "  class-mean audit: "
            << (audit_ok ? "exact match" : "MISMATCH") << "\n";
        if (!audit_ok)
          std::fprintf(stderr,
                       "report: `all` row of %s is not the per-class mean\n",
                       eval_paths[e].c_str());
      }
      sum << "\n";
    }
  }
  std::cout << "report written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"view-supervised single-view mesh reconstruction toolkit"};
  app.require_subcommand(1);

  // make-dataset
  auto* mk = app.add_subcommand("make-dataset",
                                "synthesize a primitive dataset");
  data::SynthOptions mk_opts;
  std::string mk_out;
  std::string mk_classes = "box,ellipsoid,cylinder,cone,lshape";
  mk->add_option("--seed", mk_opts.seed, "rng seed");
  mk->add_option("--objects", mk_opts.n_objects, "number of objects");
  mk->add_option("--views", mk_opts.n_views, "views per object");
  mk->add_option("--classes", mk_classes, "comma-separated class list");
  mk->add_option("--size", mk_opts.size, "image size (power of two)");
  mk->add_option("--first-az-min", mk_opts.first_view_az_min,
                 "lower azimuth bound for view 0 of each object");
  mk->add_option("--first-az-max", mk_opts.first_view_az_max,
                 "upper azimuth bound for view 0 of each object");
  mk->add_option("--out", mk_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "run a training configuration");
  std::string tr_config;
  tr->add_option("--config", tr_config, "JSON config file")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_dataset, ev_out;
  std::uint64_t ev_seed = 0;
  int ev_points = 256, ev_voxel_r = 32;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--dataset", ev_dataset)->required();
  ev->add_option("--out", ev_out, "output CSV path")->required();
  ev->add_option("--seed", ev_seed);
  ev->add_option("--points", ev_points, "surface/volume sample count");
  ev->add_option("--voxel-r", ev_voxel_r, "voxel grid resolution");

  // render
  auto* rd = app.add_subcommand("render", "render a mesh or a checkpoint");
  std::string rd_mesh, rd_ckpt, rd_dataset, rd_out;
  double rd_az = 30, rd_el = 15, rd_dist = 2.5, rd_fov = 30;
  int rd_size = 256, rd_rows = 4;
  rd->add_option("--mesh", rd_mesh, "OBJ file to render");
  rd->add_option("--checkpoint", rd_ckpt, "render reconstructions instead");
  rd->add_option("--dataset", rd_dataset, "dataset for --checkpoint mode");
  rd->add_option("--az", rd_az);
  rd->add_option("--el", rd_el);
  rd->add_option("--dist", rd_dist);
  rd->add_option("--fov", rd_fov);
  rd->add_option("--size", rd_size);
  rd->add_option("--rows", rd_rows, "objects per grid in checkpoint mode");
  rd->add_option("--out", rd_out, "output PNG")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "run the numeric oracle suites");
  std::string gc_scope = "all", gc_csv;
  std::uint64_t gc_seed = 0;
  bool gc_corrupt = false;
  gc->add_option("--scope", gc_scope, "renderer|nn|losses|all");
  gc->add_option("--seed", gc_seed);
  gc->add_option("--csv", gc_csv, "per-check CSV output path");
  gc->add_flag("--corrupt", gc_corrupt,
               "negative control: corrupt one backward pass");

  // report
  auto* rp = app.add_subcommand("report", "plots + summary from CSV logs");
  std::string rp_log, rp_out = "report";
  std::vector<std::string> rp_evals;
  rp->add_option("--log", rp_log, "training log.csv")->required();
  rp->add_option("--eval", rp_evals, "eval CSV paths (repeatable)");
  rp->add_option("--out", rp_out, "output directory");

  try {
    app.parse(argc, argv);
    if (*mk) {
      mk_opts.classes.clear();
      std::stringstream ss(mk_classes);
      std::string c;
      while (std::getline(ss, c, ','))
        if (!c.empty()) mk_opts.classes.push_back(c);
      return cmd_make_dataset(mk_opts, mk_out);
    }
    if (*tr) return cmd_train(tr_config);
    if (*ev)
      return cmd_eval(ev_ckpt, ev_dataset, ev_out, ev_seed, ev_points,
                      ev_voxel_r);
    if (*rd) {
      if (!rd_mesh.empty())
        return cmd_render_mesh(rd_mesh, rd_az, rd_el, rd_dist, rd_size,
                               rd_fov, rd_out);
      if (!rd_ckpt.empty()) {
        if (rd_dataset.empty())
          throw Error("render: --checkpoint mode needs --dataset");
        return cmd_render_ckpt(rd_ckpt, rd_dataset, rd_rows, rd_out);
      }
      throw Error("render: give either --mesh or --checkpoint");
    }
    if (*gc) return cmd_gradcheck(gc_scope, gc_seed, gc_csv, gc_corrupt);
    if (*rp) return cmd_report(rp_log, rp_evals, rp_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

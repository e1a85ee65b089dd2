#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "yolortho/checkpoint.hpp"
#include "yolortho/config.hpp"
#include "yolortho/dataio.hpp"
#include "yolortho/error.hpp"
#include "yolortho/evaluation.hpp"
#include "yolortho/inference.hpp"
#include "yolortho/postprocess.hpp"
#include "yolortho/predictions.hpp"
#include "yolortho/synthetic.hpp"
#include "yolortho/trainer.hpp"

namespace yolortho::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigOptions {
  std::optional<std::string> file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "run config JSON (default: $YOLORTHO_CONFIG)");
    cmd->add_option("--set", overrides, "override a config key, key=value (repeatable)");
  }
  config::RunConfig load() const {
    return config::load_run_config(file ? std::optional<fs::path>(*file) : std::nullopt, overrides);
  }
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

fs::path base_dir_of(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

// Image list of any annotation-style file: only "images" is read.
std::vector<dataio::ImageEntry> read_image_list(const fs::path& file) {
  std::vector<dataio::ImageEntry> out;
  try {
    const nlohmann::json root = nlohmann::json::parse(read_text(file));
    for (const auto& img : root.at("images")) {
      dataio::ImageEntry e;
      e.image_id = img.at("id").get<std::int64_t>();
      e.file_path = img.at("file_name").get<std::string>();
      e.width = img.value("width", 0);
      e.height = img.value("height", 0);
      out.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedFile, file.string() + ": " + e.what());
  }
  return out;
}

dataio::DatasetIndex load_ground_truth(const fs::path& file, const std::optional<std::string>& tier) {
  return tier ? dataio::import_annotations(file, dataio::parse_tier(*tier)) : dataio::import_dataset(file);
}

std::vector<eval::ImageGroundTruth> to_ground_truth(const dataio::DatasetIndex& index) {
  std::vector<eval::ImageGroundTruth> out;
  for (const auto& img : index.images) {
    eval::ImageGroundTruth g{img.image_id, {}};
    if (auto it = index.records.find(img.image_id); it != index.records.end()) g.records = it->second;
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<ImagePredictions> run_predict(const nn::Detector& model, const std::vector<dataio::ImageEntry>& images,
                                          const fs::path& base_dir, const post::PostConfig& pc) {
  std::vector<ImagePredictions> out;
  for (const auto& e : images) {
    fs::path path = e.file_path;
    if (path.is_relative()) path = base_dir / path;
    const Image img = read_netpbm(path);
    out.push_back({e.image_id, e.file_path, nn::detect(model, img, pc.conf_thr, pc.iou_thr)});
  }
  return out;
}

std::vector<ImagePredictions> run_postprocess(const std::vector<ImagePredictions>& preds, const post::PostConfig& pc) {
  std::vector<ImagePredictions> out;
  for (const auto& p : preds) out.push_back({p.image_id, p.file_name, post::apply(p.detections, pc)});
  return out;
}

void emit_report(const eval::EvalReport& report, const std::optional<std::string>& json_path,
                 const std::optional<std::string>& table_path, const std::optional<std::string>& pr_prefix,
                 std::ostream& out) {
  const std::string table = eval::report_table(report);
  out << table;
  if (json_path) write_text(*json_path, eval::report_to_json(report));
  if (table_path) write_text(*table_path, table);
  if (pr_prefix) {
    write_text(*pr_prefix + "_quadrant.csv", eval::pr_curve_csv(report.quadrant));
    write_text(*pr_prefix + "_diagnosis.csv", eval::pr_curve_csv(report.diagnosis));
    write_text(*pr_prefix + "_enumeration.csv", eval::pr_curve_csv(report.enumeration));
  }
}

std::vector<std::string> reversed(const std::vector<std::string>& args) {
  return {args.rbegin(), args.rend()};
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tooth enumeration and dental disease detection"};
  app.name("yolortho");
  app.require_subcommand(1);
  std::function<void()> action;

  // prepare
  ConfigOptions prep_cfg;
  std::string prep_ann, prep_out;
  std::optional<std::string> prep_tier, prep_pseudo, prep_append;
  auto* prep = app.add_subcommand("prepare", "import, merge duplicate boxes, fuse pseudo labels, write a canonical dataset");
  prep_cfg.attach(prep);
  prep->add_option("--annotations", prep_ann, "annotation JSON")->required();
  prep->add_option("--tier", prep_tier, "quadrant | enumeration | disease (omit for files with per-image tiers)");
  prep->add_option("--pseudo", prep_pseudo, "prediction JSON with pseudo-label detections");
  prep->add_option("--append", prep_append, "existing canonical dataset to extend");
  prep->add_option("--out", prep_out, "output canonical dataset")->required();
  prep->callback([&] {
    action = [&] {
      const config::PrepareConfig pc = config::prepare_config(prep_cfg.load());
      dataio::DatasetIndex index = load_ground_truth(prep_ann, prep_tier);
      std::map<std::int64_t, std::vector<Detection>> pseudo;
      if (prep_pseudo) {
        for (auto& p : read_predictions(*prep_pseudo)) pseudo[p.image_id] = std::move(p.detections);
      }
      std::size_t total_pseudo = 0;
      for (const auto& img : index.images) {
        auto& recs = index.records[img.image_id];
        if (img.tier != dataio::AnnotationTier::Disease) {
          out << "image " << img.image_id << ": " << recs.size() << " records\n";
          continue;
        }
        recs = dataio::merge_colocated_boxes(recs, pc.merge_iou);
        const std::size_t annotated = recs.size();
        std::size_t accepted = 0;
        if (auto it = pseudo.find(img.image_id); it != pseudo.end()) {
          dataio::FuseResult fr = dataio::fuse_pseudo_labels(recs, it->second, pc.pseudo_conf, pc.pseudo_iou);
          accepted = fr.accepted;
          recs = std::move(fr.records);
        }
        total_pseudo += accepted;
        out << "image " << img.image_id << ": " << annotated << " annotated + " << accepted
            << " pseudo = " << recs.size() << " records\n";
      }
      if (prep_append) {
        dataio::DatasetIndex base = dataio::import_dataset(*prep_append);
        dataio::append_dataset(base, index);
        index = std::move(base);
      }
      dataio::write_annotations(index, prep_out);
      out << "wrote " << index.images.size() << " images, " << index.record_count() << " records ("
          << total_pseudo << " pseudo) to " << prep_out << "\n";
    };
  });

  // train
  ConfigOptions train_cfg;
  std::string train_data, train_out;
  std::optional<std::string> train_images, train_log;
  auto* tr = app.add_subcommand("train", "train a detector on a canonical dataset");
  train_cfg.attach(tr);
  tr->add_option("--data", train_data, "canonical dataset JSON")->required();
  tr->add_option("--images-dir", train_images, "directory of image files (default: next to --data)");
  tr->add_option("--out", train_out, "checkpoint path (rewritten every epoch)")->required();
  tr->add_option("--log", train_log, "JSON-lines step log");
  tr->callback([&] {
    action = [&] {
      const config::RunConfig rc = train_cfg.load();
      const nn::ModelConfig mc = config::model_config(rc);
      train::TrainConfig tc = config::train_config(rc);
      tc.checkpoint_path = train_out;
      if (train_log) tc.log_path = *train_log;
      const dataio::DatasetIndex index = dataio::import_dataset(train_data);
      const fs::path base = train_images ? fs::path(*train_images) : base_dir_of(train_data);
      const train::TrainResult res = train::train(index, base, mc, tc);
      for (std::size_t e = 0; e < res.epoch_losses.size(); ++e) {
        const auto& l = res.epoch_losses[e];
        out << "epoch " << e << " loss " << l.total << " bbox " << l.bbox << " cls " << l.cls << " dfl " << l.dfl
            << "\n";
      }
      nn::save_checkpoint(res.model, train_out);
      out << "wrote " << train_out << "\n";
    };
  });

  // predict
  ConfigOptions pred_cfg;
  std::string pred_ckpt, pred_out;
  std::optional<std::string> pred_data, pred_images_dir;
  std::vector<std::string> pred_images;
  auto* pr = app.add_subcommand("predict", "run a checkpoint on images; writes NMS-filtered prediction JSON");
  pred_cfg.attach(pr);
  pr->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  auto* data_opt = pr->add_option("--data", pred_data, "JSON whose \"images\" list names the inputs");
  pr->add_option("--images", pred_images, "image files (ids assigned in order)")->excludes(data_opt);
  pr->add_option("--images-dir", pred_images_dir, "directory of image files (default: next to --data)");
  pr->add_option("--out", pred_out, "prediction JSON")->required();

  // postprocess
  ConfigOptions post_cfg;
  std::string post_in, post_out;
  auto* po = app.add_subcommand("postprocess", "NMS plus one-detection-per-FDI assignment on prediction JSON");
  post_cfg.attach(po);
  po->add_option("--in", post_in, "prediction JSON")->required();
  po->add_option("--out", post_out, "corrected prediction JSON")->required();
  po->callback([&] {
    action = [&] {
      const post::PostConfig pc = config::post_config(post_cfg.load());
      write_predictions(run_postprocess(read_predictions(post_in), pc), post_out);
    };
  });

  // evaluate
  ConfigOptions eval_cfg;
  std::string eval_pred, eval_gt;
  std::optional<std::string> eval_tier, eval_out, eval_table, eval_pr;
  auto* ev = app.add_subcommand("evaluate", "three-axis AP of post-processed predictions");
  eval_cfg.attach(ev);
  ev->add_option("--pred", eval_pred, "post-processed prediction JSON")->required();
  ev->add_option("--gt", eval_gt, "ground-truth annotation JSON")->required();
  ev->add_option("--gt-tier", eval_tier, "tier of --gt when it has no per-image tiers");
  ev->add_option("--out", eval_out, "report JSON");
  ev->add_option("--table", eval_table, "plain-text table");
  ev->add_option("--pr-csv", eval_pr, "prefix for per-axis PR-curve CSV files");
  ev->callback([&] {
    action = [&] {
      const eval::EvalConfig ec = config::eval_config(eval_cfg.load());
      const auto preds = read_predictions(eval_pred);
      const auto gts = to_ground_truth(load_ground_truth(eval_gt, eval_tier));
      emit_report(eval::challenge_report(preds, gts, ec), eval_out, eval_table, eval_pr, out);
    };
  });

  // pipeline
  ConfigOptions pipe_cfg;
  std::string pipe_ckpt, pipe_data, pipe_out;
  std::optional<std::string> pipe_images_dir, pipe_gt, pipe_tier, pipe_report;
  auto* pi = app.add_subcommand("pipeline", "predict + postprocess (+ evaluate) in one run");
  pipe_cfg.attach(pi);
  pi->add_option("--checkpoint", pipe_ckpt, "checkpoint file")->required();
  pi->add_option("--data", pipe_data, "JSON whose \"images\" list names the inputs")->required();
  pi->add_option("--images-dir", pipe_images_dir, "directory of image files (default: next to --data)");
  pi->add_option("--out", pipe_out, "post-processed prediction JSON")->required();
  pi->add_option("--gt", pipe_gt, "ground truth; enables evaluation");
  pi->add_option("--gt-tier", pipe_tier, "tier of --gt when it has no per-image tiers");
  pi->add_option("--report", pipe_report, "report JSON (requires --gt)");
  pi->callback([&] {
    action = [&] {
      const config::RunConfig rc = pipe_cfg.load();
      const post::PostConfig pc = config::post_config(rc);
      const nn::Detector model = nn::load_checkpoint(pipe_ckpt);
      const fs::path base = pipe_images_dir ? fs::path(*pipe_images_dir) : base_dir_of(pipe_data);
      const auto preds = run_postprocess(run_predict(model, read_image_list(pipe_data), base, pc), pc);
      write_predictions(preds, pipe_out);
      if (pipe_gt) {
        const auto gts = to_ground_truth(load_ground_truth(*pipe_gt, pipe_tier));
        emit_report(eval::challenge_report(preds, gts, config::eval_config(rc)), pipe_report, std::nullopt,
                    std::nullopt, out);
      } else if (pipe_report) {
        throw CLI::ValidationError("--report", "requires --gt");
      }
    };
  });

  // ablate
  ConfigOptions abl_cfg;
  std::vector<std::string> abl_ckpts;
  std::string abl_data, abl_gt;
  std::optional<std::string> abl_images_dir, abl_tier, abl_out;
  auto* ab = app.add_subcommand("ablate",
                                "evaluate checkpoints with the enumeration post-process on and off; "
                                "upsampling/CoordConv rows need their own trained checkpoints");
  abl_cfg.attach(ab);
  ab->add_option("--checkpoint", abl_ckpts, "checkpoint, optionally label=path (repeatable)")->required();
  ab->add_option("--data", abl_data, "JSON whose \"images\" list names the inputs")->required();
  ab->add_option("--images-dir", abl_images_dir, "directory of image files (default: next to --data)");
  ab->add_option("--gt", abl_gt, "ground truth")->required();
  ab->add_option("--gt-tier", abl_tier, "tier of --gt when it has no per-image tiers");
  ab->add_option("--out", abl_out, "ablation JSON");
  ab->callback([&] {
    action = [&] {
      const config::RunConfig rc = abl_cfg.load();
      const post::PostConfig base_pc = config::post_config(rc);
      const eval::EvalConfig ec = config::eval_config(rc);
      const auto images = read_image_list(abl_data);
      const fs::path base = abl_images_dir ? fs::path(*abl_images_dir) : base_dir_of(abl_data);
      const auto gts = to_ground_truth(load_ground_truth(abl_gt, abl_tier));
      nlohmann::json rows = nlohmann::json::array();
      char line[256];
      std::snprintf(line, sizeof line, "%-16s %-9s %-9s %-6s %8s %8s %8s\n", "checkpoint", "upsample", "coordconv",
                    "post", "AP-Q", "AP-D", "AP-E");
      out << line;
      for (const std::string& arg : abl_ckpts) {
        const auto eq = arg.find('=');
        const std::string path = eq == std::string::npos ? arg : arg.substr(eq + 1);
        const std::string label = eq == std::string::npos ? fs::path(arg).stem().string() : arg.substr(0, eq);
        const nn::Detector model = nn::load_checkpoint(path);
        const auto raw = run_predict(model, images, base, base_pc);
        for (bool enumeration : {false, true}) {
          post::PostConfig pc = base_pc;
          pc.enumeration = enumeration;
          const eval::EvalReport r = eval::challenge_report(run_postprocess(raw, pc), gts, ec);
          const auto& mc = model.config();
          std::snprintf(line, sizeof line, "%-16s %-9s %-9s %-6s %8.3f %8.3f %8.3f\n", label.c_str(),
                        mc.extra_upsample_enabled ? "on" : "off", mc.coordconv_enabled ? "on" : "off",
                        enumeration ? "on" : "off", r.quadrant.ap, r.diagnosis.ap, r.enumeration.ap);
          out << line;
          rows.push_back({{"checkpoint", label},
                          {"extra_upsample", mc.extra_upsample_enabled},
                          {"coordconv", mc.coordconv_enabled},
                          {"enumeration_post", enumeration},
                          {"ap_quadrant", r.quadrant.ap},
                          {"ap_diagnosis", r.diagnosis.ap},
                          {"ap_enumeration", r.enumeration.ap},
                          {"ap50_quadrant", r.quadrant.ap50},
                          {"ap50_diagnosis", r.diagnosis.ap50},
                          {"ap50_enumeration", r.enumeration.ap50}});
        }
      }
      if (abl_out) write_text(*abl_out, rows.dump(2) + "\n");
    };
  });

  // synth
  std::string synth_out;
  int synth_count = 8;
  std::uint64_t synth_seed = 0;
  synth::SyntheticConfig sc;
  auto* sy = app.add_subcommand("synth", "write procedural panoramic-like images with disease-tier annotations");
  sy->add_option("--out", synth_out, "output directory")->required();
  sy->add_option("--count", synth_count, "number of images")->check(CLI::PositiveNumber);
  sy->add_option("--seed", synth_seed, "base seed");
  sy->add_option("--width", sc.width, "image width");
  sy->add_option("--height", sc.height, "image height");
  sy->add_option("--attribute-prob", sc.attribute_prob, "per-tooth chance of each attribute")->check(CLI::Range(0.0, 1.0));
  sy->add_option("--missing-prob", sc.missing_prob, "per-tooth chance of a missing tooth")->check(CLI::Range(0.0, 1.0));
  sy->callback([&] {
    action = [&] {
      const auto index = synth::write_synthetic_dataset(synth_out, synth_count, sc, synth_seed);
      out << "wrote " << index.images.size() << " images, " << index.record_count() << " records to "
          << (fs::path(synth_out) / "annotations.json").string() << "\n";
    };
  });

  // config
  ConfigOptions show_cfg;
  auto* cf = app.add_subcommand("config", "print the effective run config");
  show_cfg.attach(cf);
  cf->callback([&] { action = [&] { out << show_cfg.load().to_json(); }; });

  pr->callback([&] {
    action = [&] {
      const post::PostConfig pc = config::post_config(pred_cfg.load());
      const nn::Detector model = nn::load_checkpoint(pred_ckpt);
      std::vector<dataio::ImageEntry> images;
      fs::path base = ".";
      if (pred_data) {
        images = read_image_list(*pred_data);
        base = base_dir_of(*pred_data);
      } else if (!pred_images.empty()) {
        for (std::size_t i = 0; i < pred_images.size(); ++i) {
          images.push_back({static_cast<std::int64_t>(i), pred_images[i], 0, 0, dataio::AnnotationTier::Disease});
        }
      } else {
        throw CLI::RequiredError("--data or --images");
      }
      if (pred_images_dir) base = *pred_images_dir;
      write_predictions(run_predict(model, images, base, pc), pred_out);
    };
  });

  try {
    std::vector<std::string> argv = reversed(args);
    app.parse(argv);
    action();
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: UsageError: " << msg << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << to_string(e.kind()) << ": " << msg << "\n";
    return kExitModuleError;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: Internal: " << msg << "\n";
    return kExitModuleError;
  }
  return kExitOk;
}

}  // namespace yolortho::cli

#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "pwtp/config.hpp"
#include "pwtp/datagen.hpp"
#include "pwtp/gradcheck.hpp"
#include "pwtp/io.hpp"
#include "pwtp/training.hpp"

namespace pwtp::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;

struct LoadedSplit {
  Tensor clips;  // N x S x T x H x W x C
  std::vector<std::size_t> labels;
};

std::vector<std::size_t> read_manifest_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path.string() + "'");
  std::vector<std::size_t> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::size_t index = 0, label = 0;
    if (!(fields >> index >> label) || index != labels.size()) {
      throw Error(path.filename().string() + ":" + std::to_string(line_no) + ": malformed manifest line");
    }
    labels.push_back(label);
  }
  return labels;
}

LoadedSplit load_split(const fs::path& dir, const std::string& split) {
  LoadedSplit s;
  s.clips = io::read_tensor(dir / (split + ".pwtt"));
  s.labels = read_manifest_labels(dir / (split + "_manifest.tsv"));
  if (s.clips.rank() != 6 || s.clips.dim(0) != s.labels.size()) {
    throw Error(split + " split: tensor " + shape_string(s.clips.shape()) + " does not match " +
                std::to_string(s.labels.size()) + " manifest lines");
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

int gen_data(const RunConfig& cfg, const fs::path& out_dir, const std::string& frames_dir, std::ostream& out) {
  const Dataset ds = make_dataset(cfg.data);
  fs::create_directories(out_dir);
  io::write_tensor(out_dir / "train.pwtt", stack_clips(ds.train));
  io::write_tensor(out_dir / "test.pwtt", stack_clips(ds.test));
  write_text(out_dir / "train_manifest.tsv", manifest(ds.train));
  write_text(out_dir / "test_manifest.tsv", manifest(ds.test));
  if (!frames_dir.empty()) {
    // First test clip, segments laid end to end.
    const Tensor& c = ds.test.front().clip;
    io::write_frames(frames_dir, c.reshaped(Shape{c.dim(0) * c.dim(1), c.dim(2), c.dim(3), c.dim(4)}));
  }
  out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test clips to " << out_dir.string()
      << "\n";
  return 0;
}

int train_unsup(const RunConfig& cfg, const fs::path& data_dir, const fs::path& ckpt, const fs::path& log_path,
                std::ostream& out) {
  const LoadedSplit train = load_split(data_dir, "train");
  const UnsupResult r = train_unsupervised(train.clips, cfg.pwtp, cfg.train);
  std::ostringstream log;
  log << "step,enopr,lr\n";
  for (const auto& row : r.log) log << row.step << ',' << fmt(row.enopr) << ',' << fmt(row.lr) << '\n';
  ensure_parent(ckpt);
  ensure_parent(log_path);
  io::write_checkpoint(ckpt, checkpoint_params(r.params));
  write_text(log_path, log.str());
  if (!r.log.empty()) out << "final enopr=" << fmt(r.log.back().enopr) << "\n";
  return 0;
}

int train_joint_cmd(const RunConfig& cfg, const fs::path& data_dir, const fs::path& ckpt, const fs::path& log_path,
                    std::ostream& out) {
  const LoadedSplit train = load_split(data_dir, "train");
  const JointResult r = train_joint(train.clips, train.labels, cfg.data.classes, cfg.pwtp, cfg.train, cfg.joint);
  std::ostringstream log;
  log << "step,enopr,loss2,alpha\n";
  for (const auto& row : r.log) {
    log << row.step << ',' << fmt(row.enopr) << ',' << fmt(row.loss2) << ',' << fmt(row.alpha) << '\n';
  }
  ensure_parent(ckpt);
  ensure_parent(log_path);
  io::write_checkpoint(ckpt, checkpoint_params(r.theta1, &r.theta2));
  write_text(log_path, log.str());
  if (!r.log.empty()) out << "final loss2=" << fmt(r.log.back().loss2) << "\n";
  return 0;
}

int extract(const RunConfig& cfg, const fs::path& frames_dir, const fs::path& ckpt, const fs::path& out_dir,
            std::ostream& out) {
  const Tensor frames = io::read_frames(frames_dir);
  const std::size_t total = frames.dim(0), t = cfg.pwtp.frames;
  if (total % t != 0) {
    throw Error("frame count " + std::to_string(total) + " is not a multiple of T = " + std::to_string(t));
  }
  const PwtpParams theta1 = load_theta1(io::read_checkpoint(ckpt), cfg.pwtp, frames.dim(3));
  const std::size_t segs = total / t;
  const PwtpResult r = pwtp_forward(
      frames.reshaped(Shape{segs, t, frames.dim(1), frames.dim(2), frames.dim(3)}), theta1, cfg.pwtp);
  fs::create_directories(out_dir);
  const std::size_t plane = r.da.size() / segs;
  for (std::size_t s = 0; s < segs; ++s) {
    Tensor da(Shape{frames.dim(1), frames.dim(2), frames.dim(3)},
              std::vector<double>(r.da.ptr() + s * plane, r.da.ptr() + (s + 1) * plane));
    char name[32];
    std::snprintf(name, sizeof name, "da_%05zu.ppm", s + 1);
    io::write_file(out_dir / name, io::export_da(da));
  }
  out << "wrote " << segs << " dynamic appearance images to " << out_dir.string() << "\n";
  return 0;
}

int eval(const RunConfig& cfg, const fs::path& data_dir, const fs::path& ckpt, InputMode mode, std::ostream& out) {
  const LoadedSplit test = load_split(data_dir, "test");
  const ParamSet params = io::read_checkpoint(ckpt);
  const std::size_t channels = test.clips.dim(5);
  const HeadParams theta2 = load_theta2(params, channels, cfg.data.classes);
  PwtpParams theta1;
  if (mode == InputMode::da) theta1 = load_theta1(params, cfg.pwtp, channels);
  const double acc = evaluate(test.clips, test.labels, theta1, theta2, cfg.pwtp, mode);
  out << "accuracy=" << fmt(acc) << "\n";
  return 0;
}

int gradcheck(const RunConfig& cfg, double h, std::size_t clips, std::ostream& out) {
  Rng rng(mix_seed(cfg.train.seed, 0x67C));
  const PwtpParams theta1 = init_pwtp_params(cfg.pwtp, kChannels, rng);
  const HeadParams theta2 = init_head_params(kChannels, cfg.data.classes, rng);
  Tensor x(Shape{clips, cfg.data.segments, cfg.pwtp.frames, cfg.data.height, cfg.data.width, kChannels});
  for (auto& v : x.data()) v = rng.uniform();
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < clips; ++i) labels.push_back(rng.below(cfg.data.classes));

  const Shape& s = x.shape();
  const Tensor segments = x.reshaped(Shape{s[0] * s[1], s[2], s[3], s[4], s[5]});
  const auto r1 = grad_check_report(enopr_objective(segments, cfg.pwtp, theta1.running), theta1.weights, h);
  ParamSet joint = theta1.weights;
  joint.merge(theta2.weights);
  const auto r2 = grad_check_report(
      recognition_objective(x, labels, cfg.pwtp, theta1.running, cfg.train.label_smoothing), joint, h);
  const double worst = std::max(r1.max_rel_error, r2.max_rel_error);
  out << "enopr_max_rel_error=" << fmt(r1.max_rel_error) << " (" << r1.evaluated << " params, worst "
      << r1.worst_param << "[" << r1.worst_index << "])\n";
  out << "recognition_max_rel_error=" << fmt(r2.max_rel_error) << " (" << r2.evaluated << " params, worst "
      << r2.worst_param << "[" << r2.worst_index << "])\n";
  out << "max_rel_error=" << fmt(worst) << "\n";
  return worst < kGradTolerance ? 0 : 1;
}

CLI::Validator joint_mode_validator() {
  return CLI::Validator(
      [](std::string& v) {
        try {
          JointMode::parse(v);
        } catch (const Error& e) {
          return std::string(e.what());
        }
        return std::string();
      },
      "MODE");
}

CLI::Validator input_mode_validator() {
  return CLI::Validator(
      [](std::string& v) {
        try {
          parse_input_mode(v);
        } catch (const Error& e) {
          return std::string(e.what());
        }
        return std::string();
      },
      "da|rgb");
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pixel-wise temporal projection: data generation, training, extraction and evaluation", "pwtp"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, log_path, frames_dir, ckpt_path, mode_text, input_text;
  std::string gen_frames;
  std::optional<std::size_t> steps;
  double h = 1e-5;
  std::size_t grad_clips = 2;

  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run configuration file")->required()->check(CLI::ExistingFile);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset and manifests");
  add_config(gen);
  gen->add_option("--out", out_path, "Output directory")->required();
  gen->add_option("--frames", gen_frames, "Also write the first test clip as frame_%05d.ppm files here");

  auto* unsup = app.add_subcommand("train-unsup", "Train the projector on ENoPR alone");
  add_config(unsup);
  unsup->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  unsup->add_option("--out", out_path, "Checkpoint path")->required();
  unsup->add_option("--log", log_path, "CSV log path (step,enopr,lr)")->required();
  unsup->add_option("--steps", steps, "Override [train] steps");

  auto* joint = app.add_subcommand("train-joint", "Jointly train projector and recognizer");
  add_config(joint);
  joint->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  joint->add_option("--out", out_path, "Checkpoint path")->required();
  joint->add_option("--log", log_path, "CSV log path (step,enopr,loss2,alpha)")->required();
  joint->add_option("--mode", mode_text, "separate | constant:<a> | mgda | sched:<gamma>,<lambda>")
      ->check(joint_mode_validator());
  joint->add_option("--input-mode", input_text, "Head input: da or rgb")->check(input_mode_validator());
  joint->add_option("--steps", steps, "Override [train] steps");

  auto* ext = app.add_subcommand("extract", "Write dynamic appearance images for a frame directory");
  add_config(ext);
  ext->add_option("--frames", frames_dir, "Directory of frame_%05d.ppm files")->required();
  ext->add_option("--checkpoint", ckpt_path, "Checkpoint with theta1 tensors")->required()->check(CLI::ExistingFile);
  ext->add_option("--out", out_path, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Top-1 accuracy on the test split");
  add_config(ev);
  ev->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--checkpoint", ckpt_path, "Checkpoint with theta1 and theta2 tensors")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--input-mode", input_text, "Head input: da or rgb")->check(input_mode_validator());

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  add_config(gc);
  gc->add_option("--step", h, "Finite-difference step")->check(CLI::PositiveNumber);
  gc->add_option("--clips", grad_clips, "Random clips in the probe batch")->check(CLI::Range(1, 64));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (steps) cfg.train.steps = *steps;
    if (!mode_text.empty()) cfg.joint.mode = JointMode::parse(mode_text);
    if (joint->count("--input-mode") || ev->count("--input-mode")) cfg.joint.input = parse_input_mode(input_text);
    cfg.validate();

    if (*gen) return gen_data(cfg, out_path, gen_frames, out);
    if (*unsup) return train_unsup(cfg, data_dir, out_path, log_path, out);
    if (*joint) return train_joint_cmd(cfg, data_dir, out_path, log_path, out);
    if (*ext) return extract(cfg, frames_dir, ckpt_path, out_path, out);
    if (*ev) return eval(cfg, data_dir, ckpt_path, cfg.joint.input, out);
    if (*gc) return gradcheck(cfg, h, grad_clips, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pwtp::cli

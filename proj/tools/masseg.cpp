#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "masseg/cli.hpp"

namespace {

bool parse_size(const std::string& text, int& w, int& h) {
  const auto x = text.find('x');
  if (x == std::string::npos) return false;
  try {
    std::size_t used = 0;
    w = std::stoi(text.substr(0, x), &used);
    if (used != x) return false;
    h = std::stoi(text.substr(x + 1), &used);
    return used == text.size() - x - 1;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-agent snake segmentation and SURF tracking"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "segment frame 0 and track the rest");
  std::string config_path;
  bool overlays = false, keypoints = false;
  run->add_option("--config", config_path, "key=value config file")->required();
  run->add_flag("--emit-overlays", overlays, "write overlays/frame_%05d.ppm");
  run->add_flag("--dump-keypoints", keypoints, "write keypoints/frame_%05d.txt");

  auto* synth = app.add_subcommand("synth", "write a synthetic PGM sequence");
  std::string kind, size = "128x128", out;
  int frames = 1;
  double speed = 0.0;
  synth->add_option("--kind", kind, "disk | square | translate_square")->required();
  synth->add_option("--size", size, "WxH");
  synth->add_option("--frames", frames, "number of frames");
  synth->add_option("--speed", speed, "pixels per frame (translate_square)");
  synth->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : masseg::cli::kIoOrConfig;
  }

  if (*run) {
    masseg::cli::RunConfig cfg;
    try {
      cfg = masseg::cli::load_config(config_path);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return masseg::cli::kIoOrConfig;
    }
    cfg.emit_overlays = cfg.emit_overlays || overlays;
    cfg.dump_keypoints = cfg.dump_keypoints || keypoints;
    return masseg::cli::run(cfg, std::cerr);
  }

  int w = 0, h = 0;
  if (!parse_size(size, w, h)) {
    std::cerr << "error: --size must look like 128x96\n";
    return masseg::cli::kIoOrConfig;
  }
  try {
    return masseg::cli::synth(masseg::cli::parse_synth_kind(kind), w, h, frames, speed, out,
                              std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return masseg::cli::kIoOrConfig;
  }
}

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mexhdr/mexhdr.hpp"

namespace fs = std::filesystem;
using namespace mexhdr;

namespace {

std::vector<double> parse_ev_list(const std::string& csv) {
  std::vector<double> evs;
  std::istringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    evs.push_back(std::stod(item));
  }
  if (evs.empty()) throw Error("expected a comma-separated EV list, got '" + csv + "'");
  return evs;
}

int cmd_synth_dataset(const std::string& hdr_dir, const std::string& out_dir,
                      const std::string& dorf_path, const std::string& crf_names, int crf_count,
                      const std::string& evs_csv, int bit_depth) {
  CrfSelection selection;
  if (!crf_names.empty()) {
    std::istringstream ss(crf_names);
    std::string name;
    while (std::getline(ss, name, ',')) selection.names.push_back(name);
  } else {
    selection.count = crf_count;
  }
  auto curves = load_dorf(dorf_path, selection);
  auto evs = parse_ev_list(evs_csv);
  Manifest manifest = synth_dataset(hdr_dir, curves, evs, out_dir, bit_depth);
  std::cout << "wrote " << manifest.entries.size() << " images over "
            << manifest.stacks().size() << " stacks to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& data_manifest, const std::string& resume) {
  KvConfig kv = KvConfig::load(config_path);
  TrainConfig cfg = train_config_from_kv(kv);
  if (!data_manifest.empty()) cfg.data_manifest = data_manifest;
  if (cfg.data_manifest.empty())
    throw Error("train: no dataset (set data_manifest in the config or pass --data)");

  fs::create_directories(out_dir);
  // Every run logs the fully resolved configuration it executed with.
  {
    std::ofstream rc(out_dir + "/config_resolved.cfg");
    write_train_config(rc, cfg);
    write_train_config(std::cout, cfg);
  }
  auto scenes = load_training_scenes(read_manifest(cfg.data_manifest));
  std::ofstream metrics(out_dir + "/metrics.tsv");
  if (!metrics) throw Error("train: cannot write metrics log in '" + out_dir + "'");

  std::uint64_t report_every = std::max(1, cfg.max_steps / 20);
  TrainState st = fit(cfg, scenes, out_dir, &metrics, resume,
                      [&](const TrainState& state, const LossBreakdown& b) {
                        if (state.step % report_every == 0)
                          std::cerr << "step " << state.step << " loss " << b.total << " lr "
                                    << state.lr() << "\n";
                        return true;
                      });
  std::cout << "finished at step " << st.step << "; final checkpoint: " << out_dir
            << "/final.ckpt\n";
  return 0;
}

int cmd_infer_stack(const std::string& input_path, const std::string& weights,
                    const std::string& evs_csv, const std::string& out_dir, double ev_in,
                    double mask_gamma, const std::string& mask_variant, int bit_depth) {
  auto evs = parse_ev_list(evs_csv);
  std::sort(evs.begin(), evs.end());
  Model model = load_model(weights);
  LdrImage input = read_ldr(input_path);
  input.meta = ExposureMeta::from_ev(ev_in);
  MaskConfig mask_cfg{mask_gamma, mask_variant_from_string(mask_variant)};

  ExposureStack stack = generate_stack(model, input, evs, mask_cfg);
  fs::create_directories(out_dir);
  std::string stem = fs::path(input_path).stem().string();
  Manifest manifest;
  for (auto& img : stack.images) {
    img.bit_depth = bit_depth;
    std::string name = stem + "_ev" + format_ev(img.meta.ev_offset) + ".png";
    write_ldr((fs::path(out_dir) / name).string(), img);
    manifest.entries.push_back(
        {stem, img.crf_name.empty() ? "-" : img.crf_name, img.meta.ev_offset, name, bit_depth});
  }
  write_manifest((fs::path(out_dir) / (stem + "_stack.tsv")).string(), manifest);
  std::cout << "wrote " << stack.images.size() << " exposures to " << out_dir << "\n";
  return 0;
}

ExposureStack load_manifest_stack(const std::string& manifest_path, const std::string& scene,
                                  const std::string& crf_name) {
  Manifest manifest = read_manifest(manifest_path);
  auto groups = manifest.stacks();
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& [key, entries] : groups) {
    if (!scene.empty() && key.first != scene) continue;
    if (!crf_name.empty() && key.second != crf_name) continue;
    keys.push_back(key);
  }
  if (keys.empty()) throw Error("no stack matches the given scene/crf filters in '" +
                                manifest_path + "'");
  if (keys.size() > 1) {
    std::string options;
    for (const auto& [s, c] : keys) options += " " + s + "/" + c;
    throw Error("manifest holds multiple stacks, pick one with --scene/--crf-name:" + options);
  }
  return load_stack(groups[keys[0]], keys[0].first);
}

int cmd_merge_hdr(const std::string& manifest_path, const std::string& out_path,
                  const std::string& method, const std::string& dorf_path,
                  const std::string& crf_name, const std::string& scene,
                  const std::string& stack_crf) {
  ExposureStack stack = load_manifest_stack(manifest_path, scene, stack_crf);
  Crf inverse_source = identity_crf();
  if (!dorf_path.empty()) {
    if (crf_name.empty()) throw Error("merge-hdr: --dorf needs --crf <curve name>");
    inverse_source = load_dorf(dorf_path, {.names = {crf_name}}).front();
  }
  MergeConfig cfg;
  if (method == "debevec")
    cfg.method = MergeMethod::kDebevecWeighted;
  else if (method == "robertson")
    cfg.method = MergeMethod::kRobertsonMl;
  else
    throw Error("merge-hdr: method must be debevec or robertson, got '" + method + "'");
  RadianceMap merged = merge(stack, inverse_source, cfg);
  write_hdr(out_path, merged);
  std::cout << "merged " << stack.images.size() << " exposures into " << out_path << "\n";
  return 0;
}

int cmd_tonemap(const std::string& in_path, const std::string& out_path, double key,
                double lwhite, int bit_depth) {
  RadianceMap hdr = read_hdr(in_path);
  LdrImage ldr = tonemap_reinhard(hdr, {key, lwhite});
  ldr.bit_depth = bit_depth;
  write_ldr(out_path, ldr);
  std::cout << "tone-mapped " << in_path << " -> " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_manifest, const std::string& ref_manifest,
                 const std::string& pred_hdr, const std::string& ref_hdr,
                 const std::string& out_path, double key, double lwhite) {
  std::ofstream out(out_path);
  if (!out) throw Error("evaluate: cannot write '" + out_path + "'");
  if (!pred_hdr.empty() || !ref_hdr.empty()) {
    if (pred_hdr.empty() || ref_hdr.empty())
      throw Error("evaluate: HDR mode needs both --pred-hdr and --ref-hdr");
    HdrMetrics m = evaluate_hdr(read_hdr(pred_hdr), read_hdr(ref_hdr), {key, lwhite});
    out << "tonemapped_psnr_db\ttonemapped_ssim\tlinear_psnr_db\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.4f\t%.6f\t%.4f\n", m.tonemapped_psnr_db, m.tonemapped_ssim,
                  m.linear_psnr_db);
    out << buf;
    std::cout << buf;
    return 0;
  }
  if (pred_manifest.empty() || ref_manifest.empty())
    throw Error("evaluate: stack mode needs --pred and --ref manifests");
  auto pred_groups = read_manifest(pred_manifest).stacks();
  auto ref_groups = read_manifest(ref_manifest).stacks();
  // Pair prediction stacks with references by scene id.
  bool header = true;
  int matched = 0;
  for (const auto& [pkey, pentries] : pred_groups) {
    for (const auto& [rkey, rentries] : ref_groups) {
      if (pkey.first != rkey.first) continue;
      ExposureStack pred = load_stack(pentries, pkey.first);
      ExposureStack ref = load_stack(rentries, rkey.first);
      auto rows = evaluate_stacks(pred, ref);
      write_stack_metrics_tsv(out, pkey.first, rows, header);
      header = false;
      ++matched;
    }
  }
  if (!matched) throw Error("evaluate: no scene ids in common between the manifests");
  std::cout << "evaluated " << matched << " stack pairs -> " << out_path << "\n";
  return 0;
}

int cmd_mask_dump(const std::string& input_path, const std::string& out_path, double gamma,
                  const std::string& variant) {
  LdrImage input = read_ldr(input_path);
  Mask mask = well_exposed_mask(input, {gamma, mask_variant_from_string(variant)});
  Image img(mask.height, mask.width, 1);
  img.data = mask.values;
  write_png(out_path, img, 8);
  std::cout << "wrote mask to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-image multi-exposure generation and HDR reconstruction"};
  app.require_subcommand(1);

  // synth-dataset
  std::string sd_hdr_dir, sd_out, sd_dorf, sd_crf_names, sd_evs = "-4,-3,-2,-1,0,1,2,3,4";
  int sd_crf_count = 5, sd_bit_depth = 8;
  auto* synth = app.add_subcommand("synth-dataset", "render LDR stacks from HDR scenes");
  synth->add_option("--hdr-dir", sd_hdr_dir, "directory of .hdr/.pfm scenes")->required();
  synth->add_option("--out", sd_out, "output directory")->required();
  synth->add_option("--dorf", sd_dorf, "response-curve file (DoRF text layout)")->required();
  synth->add_option("--crf-names", sd_crf_names, "comma-separated curve names");
  synth->add_option("--crf-count", sd_crf_count, "evenly strided curve count");
  synth->add_option("--evs", sd_evs, "comma-separated EV offsets");
  synth->add_option("--bit-depth", sd_bit_depth, "8 or 16");

  // train
  std::string tr_config, tr_out, tr_data, tr_resume;
  auto* train = app.add_subcommand("train", "optimize the three networks on exposure pairs");
  train->add_option("--config", tr_config, "key=value training configuration")->required();
  train->add_option("--out", tr_out, "run directory (checkpoints, logs)")->required();
  train->add_option("--data", tr_data, "dataset manifest (overrides the config)");
  train->add_option("--resume", tr_resume, "checkpoint to continue from");

  // infer-stack
  std::string is_input, is_weights, is_evs = "-2,-1,0,1,2", is_out, is_variant = "min";
  double is_ev_in = 0.0, is_gamma = 0.05;
  int is_bit_depth = 16;
  auto* infer = app.add_subcommand("infer-stack", "generate a bracket from one image");
  infer->add_option("--input", is_input, "input PNG")->required();
  infer->add_option("--weights", is_weights, "model checkpoint")->required();
  infer->add_option("--evs", is_evs, "comma-separated EV offsets");
  infer->add_option("--out", is_out, "output directory")->required();
  infer->add_option("--ev-in", is_ev_in, "EV of the input image");
  infer->add_option("--mask-gamma", is_gamma, "well-exposedness threshold");
  infer->add_option("--mask-variant", is_variant, "min or max combination");
  infer->add_option("--bit-depth", is_bit_depth, "output PNG depth (8 or 16)");

  // merge-hdr
  std::string mh_stack, mh_out, mh_method = "debevec", mh_dorf, mh_crf, mh_scene, mh_stack_crf;
  auto* merge_cmd = app.add_subcommand("merge-hdr", "merge a bracket into linear radiance");
  merge_cmd->add_option("--stack", mh_stack, "stack manifest")->required();
  merge_cmd->add_option("--out", mh_out, "output .hdr or .pfm")->required();
  merge_cmd->add_option("--method", mh_method, "debevec or robertson");
  merge_cmd->add_option("--dorf", mh_dorf, "response-curve file for the inverse response");
  merge_cmd->add_option("--crf", mh_crf, "curve name inside --dorf");
  merge_cmd->add_option("--scene", mh_scene, "scene filter when the manifest has several");
  merge_cmd->add_option("--crf-name", mh_stack_crf, "stack curve filter");

  // tonemap
  std::string tm_in, tm_out;
  double tm_key = 0.18, tm_lwhite = 0.0;
  int tm_bit_depth = 8;
  auto* tonemap_cmd = app.add_subcommand("tonemap", "photographic global tone mapping");
  tonemap_cmd->add_option("--in", tm_in, "input .hdr or .pfm")->required();
  tonemap_cmd->add_option("--out", tm_out, "output PNG")->required();
  tonemap_cmd->add_option("--key", tm_key, "mid-gray key");
  tonemap_cmd->add_option("--lwhite", tm_lwhite, "burn-out luminance (0 = scene max)");
  tonemap_cmd->add_option("--bit-depth", tm_bit_depth, "output PNG depth");

  // evaluate
  std::string ev_pred, ev_ref, ev_pred_hdr, ev_ref_hdr, ev_out;
  double ev_key = 0.18, ev_lwhite = 0.0;
  auto* eval_cmd = app.add_subcommand("evaluate", "stack or HDR comparison metrics");
  eval_cmd->add_option("--pred", ev_pred, "predicted stack manifest");
  eval_cmd->add_option("--ref", ev_ref, "reference stack manifest");
  eval_cmd->add_option("--pred-hdr", ev_pred_hdr, "predicted HDR image");
  eval_cmd->add_option("--ref-hdr", ev_ref_hdr, "reference HDR image");
  eval_cmd->add_option("--out", ev_out, "metric table (TSV)")->required();
  eval_cmd->add_option("--key", ev_key, "tone-mapping key for HDR mode");
  eval_cmd->add_option("--lwhite", ev_lwhite, "burn-out luminance for HDR mode");

  // mask-dump
  std::string md_input, md_out, md_variant = "min";
  double md_gamma = 0.05;
  auto* mask_cmd = app.add_subcommand("mask-dump", "write the well-exposedness mask");
  mask_cmd->add_option("--input", md_input, "input PNG")->required();
  mask_cmd->add_option("--out", md_out, "output single-channel PNG")->required();
  mask_cmd->add_option("--gamma", md_gamma, "threshold");
  mask_cmd->add_option("--variant", md_variant, "min or max combination");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth_dataset(sd_hdr_dir, sd_out, sd_dorf, sd_crf_names, sd_crf_count, sd_evs,
                               sd_bit_depth);
    if (train->parsed()) return cmd_train(tr_config, tr_out, tr_data, tr_resume);
    if (infer->parsed())
      return cmd_infer_stack(is_input, is_weights, is_evs, is_out, is_ev_in, is_gamma, is_variant,
                             is_bit_depth);
    if (merge_cmd->parsed())
      return cmd_merge_hdr(mh_stack, mh_out, mh_method, mh_dorf, mh_crf, mh_scene, mh_stack_crf);
    if (tonemap_cmd->parsed()) return cmd_tonemap(tm_in, tm_out, tm_key, tm_lwhite, tm_bit_depth);
    if (eval_cmd->parsed())
      return cmd_evaluate(ev_pred, ev_ref, ev_pred_hdr, ev_ref_hdr, ev_out, ev_key, ev_lwhite);
    if (mask_cmd->parsed()) return cmd_mask_dump(md_input, md_out, md_gamma, md_variant);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

#pragma once

#include "splatlab/camera.hpp"
#include "splatlab/ply.hpp"
#include "splatlab/png_io.hpp"
#include "splatlab/scene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace splatlab {

inline constexpr const char* kManifestName = "manifest.json";

/// Writes a scene directory: manifest.json, cameras.json, images/<id>.png,
/// init.ply and, when given, ground_truth.ply.
///
/// Manifest: {extent, background, cameras_path, init_ply_path,
///            train: [{camera_id, image_path}], test: [...]}.
inline void save_scene(const std::filesystem::path& dir, const SceneBundle& scene,
                       const GaussianCloud* ground_truth = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  nlohmann::json manifest;
  manifest["extent"] = scene.extent;
  manifest["background"] = {scene.background.x(), scene.background.y(), scene.background.z()};
  manifest["cameras_path"] = "cameras.json";
  manifest["init_ply_path"] = "init.ply";
  CameraSet cams;
  for (const char* split : {"train", "test"}) {
    const auto& views = std::string(split) == "train" ? scene.train : scene.test;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : views) {
      const std::string rel = "images/" + v.camera.id + ".png";
      write_png(dir / rel, v.image);
      arr.push_back({{"camera_id", v.camera.id}, {"image_path", rel}});
      Camera c = v.camera;
      c.image_path = rel;
      cams.push_back(c);
    }
    manifest[split] = arr;
  }
  save_cameras(dir / "cameras.json", cams);
  save_ply(dir / "init.ply", initial_cloud(scene.init_points));
  if (ground_truth) {
    save_ply(dir / "ground_truth.ply", *ground_truth);
    manifest["ground_truth_ply_path"] = "ground_truth.ply";
  }
  std::ofstream out(dir / kManifestName);
  if (!out) throw std::runtime_error("cannot write " + (dir / kManifestName).string());
  out << manifest.dump(2) << '\n';
}

/// Loads a scene directory written by save_scene (or any directory with a
/// conforming manifest). Init points take position and base color from the
/// init PLY.
inline SceneBundle load_scene(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::is_directory(dir) ? dir / kManifestName : dir;
  const fs::path root = mpath.parent_path();
  std::ifstream in(mpath);
  if (!in) throw FormatError("cannot open scene manifest " + mpath.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("scene manifest: " + std::string(e.what()));
  }
  SceneBundle scene;
  try {
    scene.extent = m.at("extent").get<double>();
    if (m.contains("background")) {
      const auto bg = m.at("background").get<std::vector<double>>();
      if (bg.size() != 3) throw FormatError("scene manifest: background needs 3 values");
      scene.background = Vec3(bg[0], bg[1], bg[2]);
    }
    std::map<std::string, Camera> by_id;
    for (const auto& c : load_cameras(root / m.value("cameras_path", std::string("cameras.json")))) {
      by_id[c.id] = c;
    }
    for (const char* split : {"train", "test"}) {
      auto& views = std::string(split) == "train" ? scene.train : scene.test;
      for (const auto& entry : m.at(split)) {
        const std::string id = entry.at("camera_id").get<std::string>();
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw FormatError("scene manifest: unknown camera " + id);
        View v;
        v.camera = it->second;
        v.camera.image_path = entry.at("image_path").get<std::string>();
        v.image = read_png(root / v.camera.image_path);
        views.push_back(std::move(v));
      }
    }
    const GaussianCloud init = load_ply(root / m.at("init_ply_path").get<std::string>());
    for (const Gaussian& g : init.gaussians()) scene.init_points.push_back({g.position, g.base_rgb()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("scene manifest: " + std::string(e.what()));
  }
  scene.validate();
  return scene;
}

}  // namespace splatlab

#pragma once

#include "splatlab/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatlab {

/// Pinhole camera with a world-to-camera rigid transform (x_cam = R x + t).
struct Camera {
  std::string id;
  int width = 0;
  int height = 0;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double near = 0.01;
  double far = 100.0;
  std::string image_path;

  Vec3 center() const { return -rotation.transpose() * translation; }
  double focal() const { return std::max(fx, fy); }

  void validate() const {
    if (width <= 0 || height <= 0) throw ParameterError("camera " + id + ": non-positive size");
    if (!(fx > 0.0) || !(fy > 0.0)) throw ParameterError("camera " + id + ": focal lengths must be positive");
    if (!(near > 0.0) || !(near < far)) throw ParameterError("camera " + id + ": require 0 < near < far");
    if (!((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9)) {
      throw ParameterError("camera " + id + ": rotation is not orthonormal");
    }
  }

  /// Camera at `eye` looking at `target`; +y of the image points along -up.
  static Camera look_at(std::string id, const Vec3& eye, const Vec3& target,
                        const Vec3& up, int width, int height, double focal) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.id = std::move(id);
    cam.width = width;
    cam.height = height;
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
  }
};

using CameraSet = std::vector<Camera>;

struct PointProjection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool in_front = false;
};

inline PointProjection project_point(const Camera& cam, const Vec3& p) {
  const Vec3 xc = cam.rotation * p + cam.translation;
  PointProjection out;
  out.depth = xc.z();
  out.in_front = xc.z() > 0.0;
  if (out.in_front) {
    out.pixel = Vec2(cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy);
  }
  return out;
}

inline constexpr double kDefaultGuardBand = 0.2;

/// Visibility indicator: within [near, far] and inside the guard-banded image.
inline bool is_visible(const Camera& cam, const Vec3& p,
                       double guard_band = kDefaultGuardBand) {
  const PointProjection pr = project_point(cam, p);
  if (!pr.in_front || pr.depth < cam.near || pr.depth > cam.far) return false;
  const double gx = guard_band * cam.width;
  const double gy = guard_band * cam.height;
  return pr.pixel.x() >= -gx && pr.pixel.x() <= cam.width + gx &&
         pr.pixel.y() >= -gy && pr.pixel.y() <= cam.height + gy;
}

// JSON camera files: array of {id, width, height, fx, fy, cx, cy,
// rotation[9] row-major, translation[3], near, far, image_path?}.

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["id"] = cam.id;
  j["width"] = cam.width;
  j["height"] = cam.height;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  std::vector<double> rot;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(cam.rotation(r, c));
  j["rotation"] = rot;
  j["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
  j["near"] = cam.near;
  j["far"] = cam.far;
  if (!cam.image_path.empty()) j["image_path"] = cam.image_path;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  try {
    cam.id = j.at("id").get<std::string>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto rot = j.at("rotation").get<std::vector<double>>();
    const auto tr = j.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || tr.size() != 3) {
      throw FormatError("camera rotation needs 9 values and translation 3");
    }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[r * 3 + c];
    cam.translation = Vec3(tr[0], tr[1], tr[2]);
    cam.near = j.at("near").get<double>();
    cam.far = j.at("far").get<double>();
    if (j.contains("image_path")) cam.image_path = j.at("image_path").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("camera json: ") + e.what());
  }
  cam.validate();
  return cam;
}

inline void save_cameras(const std::filesystem::path& path, std::span<const Camera> cams) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cams) arr.push_back(camera_to_json(c));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

inline CameraSet load_cameras(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open camera file " + path.string());
  nlohmann::json arr;
  try {
    in >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("camera file " + path.string() + ": " + e.what());
  }
  if (!arr.is_array()) throw FormatError("camera file must hold a JSON array");
  CameraSet cams;
  for (const auto& j : arr) cams.push_back(camera_from_json(j));
  return cams;
}

}  // namespace splatlab

#ifndef FG_SRC_LAYER_JSON_HPP
#define FG_SRC_LAYER_JSON_HPP

#include <json.hpp>

#include "fg/layers.hpp"

namespace fg {

inline nlohmann::json layer_to_json(const LayerSpec& s) {
  nlohmann::json j;
  j["kind"] = layer_kind_name(s.kind);
  switch (s.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kConvTranspose2d:
      j["in"] = s.in_ch;
      j["out"] = s.out_ch;
      j["kh"] = s.kh; j["kw"] = s.kw;
      j["sh"] = s.sh; j["sw"] = s.sw;
      j["ph"] = s.ph; j["pw"] = s.pw;
      break;
    case LayerKind::kMaxPool2d:
      j["kh"] = s.kh; j["kw"] = s.kw;
      j["sh"] = s.sh; j["sw"] = s.sw;
      break;
    case LayerKind::kAffine:
      j["in"] = s.in_ch;
      j["out"] = s.out_ch;
      break;
    case LayerKind::kLeakyRelu:
      j["slope"] = s.slope;
      break;
    case LayerKind::kDropout:
      j["p"] = s.drop_p;
      break;
    default:
      break;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s{layer_kind_from_name(j.at("kind").get<std::string>())};
  switch (s.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kConvTranspose2d:
      s.in_ch = j.at("in").get<int>();
      s.out_ch = j.at("out").get<int>();
      s.kh = j.at("kh").get<int>(); s.kw = j.at("kw").get<int>();
      s.sh = j.at("sh").get<int>(); s.sw = j.at("sw").get<int>();
      s.ph = j.at("ph").get<int>(); s.pw = j.at("pw").get<int>();
      break;
    case LayerKind::kMaxPool2d:
      s.kh = j.at("kh").get<int>(); s.kw = j.at("kw").get<int>();
      s.sh = j.at("sh").get<int>(); s.sw = j.at("sw").get<int>();
      break;
    case LayerKind::kAffine:
      s.in_ch = j.at("in").get<int>();
      s.out_ch = j.at("out").get<int>();
      break;
    case LayerKind::kLeakyRelu:
      s.slope = j.at("slope").get<double>();
      break;
    case LayerKind::kDropout:
      s.drop_p = j.at("p").get<double>();
      break;
    default:
      break;
  }
  return s;
}

inline nlohmann::json layers_to_json(const std::vector<LayerSpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : specs) arr.push_back(layer_to_json(s));
  return arr;
}

inline std::vector<LayerSpec> layers_from_json(const nlohmann::json& arr) {
  std::vector<LayerSpec> out;
  for (const auto& j : arr) out.push_back(layer_from_json(j));
  return out;
}

}  // namespace fg

#endif  // FG_SRC_LAYER_JSON_HPP

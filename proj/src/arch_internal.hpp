#pragma once

#include <memory>

#include "stroke/backbone.hpp"

namespace stroke::detail {

std::unique_ptr<Backbone> make_vit(const BackboneConfig& cfg, uint64_t seed);
std::unique_ptr<Backbone> make_tnt(const BackboneConfig& cfg, uint64_t seed);
std::unique_ptr<Backbone> make_convnext(const BackboneConfig& cfg, uint64_t seed);
std::unique_ptr<Backbone> make_maxvit(const BackboneConfig& cfg, uint64_t seed);

}  // namespace stroke::detail

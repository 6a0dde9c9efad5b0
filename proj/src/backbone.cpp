#include "evstereo/backbone.hpp"

#include "evstereo/errors.hpp"

namespace evstereo {

void add_backbone_params(std::map<std::string, Tensor>& out, const BackboneConfig& cfg,
                         uint64_t seed) {
  const int64_t b = cfg.bins, m1 = cfg.mid1, m2 = cfg.mid2, c = cfg.channels;
  contract(b >= 1 && m1 >= 1 && m2 >= 1 && c >= 1, "backbone channel counts must be positive");
  add_conv_param(out, "backbone.trunk1", {m1, b, 3, 3}, seed);
  add_conv_param(out, "backbone.trunk2", {m2, m1, 3, 3}, seed);
  add_conv_param(out, "backbone.trunk3", {c, m2, 3, 3}, seed);
  add_conv_param(out, "backbone.sem1", {c, c, 3, 3}, seed);
  add_conv_param(out, "backbone.sem2", {c, c, 3, 3}, seed);
  add_conv_param(out, "backbone.geo1", {c, c, 3, 3}, seed);
  add_conv_param(out, "backbone.geo2", {c, c, 3, 3}, seed);
}

namespace {

Val conv_block(Tape& t, const BoundParams& p, const std::string& name, Val x, int stride,
               bool relu) {
  Val y = t.conv2d(x, p.at(name + ".w"), p.at(name + ".b"), {stride, stride}, {1, 1});
  return relu ? t.relu(y) : y;
}

}  // namespace

FeaturePair extract_features(Tape& t, const BoundParams& p, const BackboneConfig& cfg,
                             Val voxel_grid) {
  const Tensor& g = t.value(voxel_grid);
  contract(g.dim() == 3, "backbone input must be (bins, h, w)");
  contract(g.size(0) == cfg.bins, "voxel grid bin count does not match the backbone config");
  contract(g.size(1) % 4 == 0 && g.size(2) % 4 == 0,
           "backbone input height and width must be divisible by 4");

  Val x = conv_block(t, p, "backbone.trunk1", voxel_grid, 2, true);
  x = conv_block(t, p, "backbone.trunk2", x, 1, true);
  x = conv_block(t, p, "backbone.trunk3", x, 2, true);

  Val sem = conv_block(t, p, "backbone.sem1", x, 1, true);
  sem = conv_block(t, p, "backbone.sem2", sem, 1, false);
  Val geo = conv_block(t, p, "backbone.geo1", x, 1, true);
  geo = conv_block(t, p, "backbone.geo2", geo, 1, false);
  return {sem, geo};
}

}  // namespace evstereo

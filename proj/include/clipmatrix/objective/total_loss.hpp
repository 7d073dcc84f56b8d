#pragma once

#include "clipmatrix/body/skinning.hpp"
#include "clipmatrix/objective/regularizers.hpp"
#include "clipmatrix/objective/sampling.hpp"
#include "clipmatrix/objective/scorer.hpp"
#include "clipmatrix/raster/render.hpp"

#include <fmt/format.h>

#include <string>
#include <vector>

namespace clipmatrix::objective {

struct PromptSpec {
  std::string text;
  std::string camera = "default";  // key into the camera distribution table
  bool textured = true;
  double weight = 1.0;

  bool operator==(const PromptSpec&) const = default;
};

/// A decoded parameter point: everything the renderer consumes besides the
/// sampled pose and camera. `lights`/`materials` hold one entry (shared) or one
/// per prompt.
struct SceneParams {
  body::BodyParams<double> body;
  raster::Texture texture;
  std::vector<raster::Light> lights;
  std::vector<raster::Material> materials;
};

struct LossSetup {
  const body::TemplateModel<double>* model = nullptr;
  const MeshTopology* topology = nullptr;
  std::vector<PromptSpec> prompts;
  std::vector<CameraDist> prompt_cameras;  // resolved, one per prompt
  PoseDist pose;
  RegWeights reg;
  int batch = 4;
  ViewSettings view;
  raster::SoftRasterConfig raster;
  std::uint64_t seed = 0;
};

/// Stream id for the per-step pose draw, distinct from every prompt index.
inline constexpr std::uint64_t kPoseStream = 0xffffffffffffffffULL;

/// Loss estimate and its gradient with respect to every parameter of SceneParams.
struct LossRecord {
  double total = 0;
  std::vector<double> prompt_losses;  // mean scorer loss per prompt (unweighted)
  double reg = 0;                     // lambda * L_reg
  RegBreakdown reg_terms;
  std::vector<double> grad_beta;
  std::vector<Vec3d> grad_delta;
  RgbGrid grad_texture;
  std::vector<raster::Light> grad_lights;
  std::vector<raster::Material> grad_materials;
  std::vector<Vec3d> theta;  // pose used this step
};

inline const raster::Light& prompt_light(const SceneParams& p, std::size_t prompt) {
  return p.lights.size() == 1 ? p.lights.front() : p.lights.at(prompt);
}
inline const raster::Material& prompt_material(const SceneParams& p, std::size_t prompt) {
  return p.materials.size() == 1 ? p.materials.front() : p.materials.at(prompt);
}

/// Monte Carlo estimate of sum_t w_t E[L_score] + lambda L_reg(S) at one step.
/// One pose is drawn per step; each prompt draws `batch` cameras from its own
/// stream. Camera targets are placed on the template mesh, so camera sampling
/// does not depend on the optimized shape. Scorer failures propagate before any
/// gradient is returned.
inline LossRecord total_loss(const LossSetup& setup, const SceneParams& params, Scorer& scorer, std::uint64_t step) {
  const auto& model = *setup.model;
  if (setup.prompts.empty()) throw ConfigError("prompts: at least one prompt required");
  if (setup.batch < 1) throw ConfigError("optim.batch: must be >= 1");
  if (setup.prompt_cameras.size() != setup.prompts.size()) throw ConfigError("camera list does not match prompts");
  const std::size_t n = model.vertex_count();

  LossRecord rec;
  rec.grad_texture = RgbGrid(params.texture.height, params.texture.width);
  rec.grad_lights.assign(params.lights.size(), raster::Light::zero());
  rec.grad_materials.assign(params.materials.size(), raster::Material::zero());

  // Regularization on the deformed rest mesh S(beta, 0, delta).
  const auto rest = body::blend_shape(model, params.body);
  std::vector<Vec3d> grad_rest(n, Vec3d::Zero());
  if (setup.reg.lambda != 0) {
    rec.reg_terms = mesh_regularization(*setup.topology, model.faces, rest, model.template_vertices, setup.reg);
    rec.reg = rec.reg_terms.total;
    grad_rest = rec.reg_terms.grad;
  }

  Rng pose_rng(derive_seed(setup.seed, {step, kPoseStream}));
  body::BodyParams<double> posed = params.body;
  posed.theta = sample_pose(setup.pose, model.joint_count(), pose_rng);
  rec.theta = posed.theta;
  const auto fk = body::forward_kinematics<double>(model, rest, posed.theta);
  const auto mesh = body::skin<double>(model, rest, fk);

  raster::RenderGrad render_grad = raster::RenderGrad::zeros(n, &params.texture);
  double prompt_total = 0;
  for (std::size_t p = 0; p < setup.prompts.size(); ++p) {
    const PromptSpec& spec = setup.prompts[p];
    Rng cam_rng(derive_seed(setup.seed, {step, p}));
    std::vector<raster::RenderState> states;
    std::vector<Image> images;
    for (int b = 0; b < setup.batch; ++b) {
      const raster::Camera cam = sample_camera(setup.prompt_cameras[p], model, model.template_vertices, setup.view, cam_rng);
      states.push_back(raster::render_with_state(mesh, cam, prompt_light(params, p), prompt_material(params, p),
                                                 &params.texture, setup.raster, spec.textured));
      images.push_back(states.back().image);
    }
    ScoreResult scored = scorer.score(images, p);
    if (scored.losses.size() != images.size() || scored.grads.size() != images.size()) {
      throw ScorerError("scorer returned the wrong number of results");
    }
    double mean = 0;
    for (double l : scored.losses) mean += l;
    mean /= setup.batch;
    if (!std::isfinite(mean)) throw NumericError(fmt::format("prompt {}: non-finite scorer loss", p));
    rec.prompt_losses.push_back(mean);
    prompt_total += spec.weight * mean;
    if (spec.weight == 0) continue;

    const double scale = spec.weight / setup.batch;
    render_grad.light = raster::Light::zero();
    render_grad.material = raster::Material::zero();
    for (int b = 0; b < setup.batch; ++b) {
      ImageGrad g = std::move(scored.grads[static_cast<std::size_t>(b)]);
      for (auto& v : g.values) v *= scale;
      raster::render_vjp(states[static_cast<std::size_t>(b)], mesh, &params.texture, g, render_grad);
    }
    rec.grad_lights[params.lights.size() == 1 ? 0 : p] += render_grad.light;
    rec.grad_materials[params.materials.size() == 1 ? 0 : p] += render_grad.material;
  }
  rec.total = prompt_total + rec.reg;
  rec.grad_texture = std::move(render_grad.texture);

  // Posed-vertex gradient back to (beta, delta); add the regularizer's rest-mesh gradient.
  body::BodyGrad<double> g = body::pose_vjp(model, posed, std::span<const Vec3d>(render_grad.vertices));
  body::BodyGrad<double> greg;
  body::blend_shape_vjp<double>(model, grad_rest, greg);
  rec.grad_beta = g.beta;
  for (std::size_t k = 0; k < rec.grad_beta.size(); ++k) rec.grad_beta[k] += greg.beta[k];
  rec.grad_delta = g.delta;
  for (std::size_t i = 0; i < n; ++i) rec.grad_delta[i] += greg.delta[i];
  return rec;
}

}  // namespace clipmatrix::objective

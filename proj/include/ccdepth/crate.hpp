#pragma once

// Coding-rate-reduction transformer layer: tokenization, coding rate, subspace
// self-attention, the MSSA compression step and the ISTA sparsification step.
//
// Token matrices are tensors of shape (d, N) or batched (B, d, N): column j is
// the d-dimensional token of patch j, patches in row-major order over the
// patch grid. Feature maps are (B, C, h, w).

#include <functional>
#include <optional>

#include <torch/torch.h>

#include "ccdepth/config.hpp"

namespace ccdepth::crate {

/// K orthonormal bases stacked as a (K, d, p) tensor.
class SubspaceBases {
 public:
  explicit SubspaceBases(torch::Tensor stacked);

  /// Each U_k is the Q factor of an independent Gaussian d x p matrix.
  static SubspaceBases orthonormal(int64_t heads, int64_t dim, int64_t subspace_dim,
                                   torch::TensorOptions opts = torch::kFloat64);

  const torch::Tensor& stacked() const { return stacked_; }
  torch::Tensor basis(int64_t k) const { return stacked_[k]; }
  int64_t heads() const { return stacked_.size(0); }
  int64_t dim() const { return stacked_.size(1); }
  int64_t subspace_dim() const { return stacked_.size(2); }

 private:
  torch::Tensor stacked_;
};

/// Square d x d sparse-coding dictionary.
class Dictionary {
 public:
  explicit Dictionary(torch::Tensor matrix);
  static Dictionary orthogonal(int64_t dim, torch::TensorOptions opts = torch::kFloat64);
  static Dictionary identity(int64_t dim, torch::TensorOptions opts = torch::kFloat64);

  const torch::Tensor& matrix() const { return matrix_; }
  int64_t dim() const { return matrix_.size(0); }

 private:
  torch::Tensor matrix_;
};

/// Learnable affine of a token-wise layer normalization.
struct TokenNorm {
  torch::Tensor weight;  // (d)
  torch::Tensor bias;    // (d)
};

struct CrateModuleParams {
  SubspaceBases bases;
  Dictionary dictionary;
  double kappa = 1.0;
  double eps = 0.1;
  double eta = 0.1;
  double lambda1 = 0.1;
  MssaScaleMode scale_mode = MssaScaleMode::kAsWritten;
  std::optional<TokenNorm> mssa_norm;  // disabled when empty
  std::optional<TokenNorm> ista_norm;
};

/// Linear map applied to every token: out = weight * x + bias.
struct TokenLinear {
  torch::Tensor weight;  // (out, in)
  torch::Tensor bias;    // (out) or undefined
};

// ---------------------------------------------------------------------------
// Tokenization.

/// (B, C, h, w) -> (B, C*patch^2, N). Within a token the index is
/// c*patch^2 + dy*patch + dx. Throws ShapeError naming the axis when h or w is
/// not divisible by patch.
torch::Tensor patchify(const torch::Tensor& x, int64_t patch);

/// Inverse of patchify for a (B, C*patch^2, N) token tensor laid out on an
/// h x w grid (full resolution, N = (h/patch)*(w/patch)).
torch::Tensor unpatchify(const torch::Tensor& tokens, int64_t h, int64_t w, int64_t patch);

/// Applies a chain of token linear maps with GELU between consecutive maps.
torch::Tensor apply_token_mlp(const torch::Tensor& tokens, const std::vector<TokenLinear>& layers);

/// patchify followed by the embedding map; returns (B, d, N).
torch::Tensor patchify_embed(const torch::Tensor& x, int64_t patch, const std::vector<TokenLinear>& embedding);

/// Inverse projection of every token followed by unpatchify onto an h x w
/// grid. The projection output must be a multiple of patch^2; the quotient is
/// the output channel count.
torch::Tensor unpatchify_project(const torch::Tensor& z, int64_t h, int64_t w, int64_t patch,
                                 const std::vector<TokenLinear>& inverse_projection);

// ---------------------------------------------------------------------------
// Rate reduction.

/// R(Z) = 1/2 logdet(I + d/(N eps^2) Z Z^T). Batched over leading dims.
torch::Tensor coding_rate(const torch::Tensor& z, double eps);

/// R(Z) - sum_k R(U_k^T Z).
torch::Tensor rate_reduction(const torch::Tensor& z, const SubspaceBases& bases, double eps);

// ---------------------------------------------------------------------------
// Compression (MSSA) and sparsification (ISTA).

/// Softmax of the Gram matrix, normalized over its first index so that every
/// column sums to one.
torch::Tensor attention_weights(const torch::Tensor& projected);

/// (U_k^T Z) softmax((U_k^T Z)^T (U_k^T Z)); returns (.., p, N).
torch::Tensor ssa(const torch::Tensor& z, const torch::Tensor& basis);

/// p/(N eps^2) sum_k U_k SSA(Z | U_k). With kSingleFactor the leading factor
/// is omitted.
torch::Tensor mssa(const torch::Tensor& z, const SubspaceBases& bases, double eps,
                   MssaScaleMode mode = MssaScaleMode::kAsWritten);

/// (1 - kappa p/(N eps^2)) Z + kappa p/(N eps^2) MSSA(Z).
torch::Tensor mssa_residual_step(const torch::Tensor& z, const CrateModuleParams& params);

/// ReLU(Z + eta D^T (Z - D Z) - eta lambda1).
torch::Tensor ista_step(const torch::Tensor& z_half, const Dictionary& dict, double eta, double lambda1);

torch::Tensor token_layer_norm(const torch::Tensor& z, const TokenNorm& norm);

/// One basic module: optional norm, MSSA step, optional norm, ISTA step.
torch::Tensor crate_module_forward(const torch::Tensor& z, const CrateModuleParams& params);

// ---------------------------------------------------------------------------
// Layers holding learnable parameters.

/// Receives (module_index starting at 1, post-ISTA tokens) during forward.
using ModuleObserver = std::function<void(int, const torch::Tensor&)>;

class CrateModuleImpl : public torch::nn::Module {
 public:
  CrateModuleImpl(int64_t dim, const CrateConfig& cfg);

  torch::Tensor forward(const torch::Tensor& z);
  CrateModuleParams params() const;

  torch::Tensor bases;       // (K, d, p)
  torch::Tensor dictionary;  // (d, d)
  torch::Tensor norm1_weight, norm1_bias, norm2_weight, norm2_bias;

 private:
  CrateConfig cfg_;
};
TORCH_MODULE(CrateModule);

/// patchify_embed -> L basic modules -> project each token to out_channels on
/// the (h/patch) x (w/patch) token grid.
class CrateLayerImpl : public torch::nn::Module {
 public:
  CrateLayerImpl(int64_t in_channels, int64_t dim, int64_t out_channels, int64_t patch, const CrateConfig& cfg);

  torch::Tensor forward(const torch::Tensor& x);

  int64_t patch() const { return patch_; }
  int64_t dim() const { return dim_; }
  int64_t module_count() const { return static_cast<int64_t>(modules_.size()); }
  CrateModule module_at(int64_t i) const { return modules_[i]; }
  std::vector<TokenLinear> embedding() const;
  std::vector<TokenLinear> inverse_projection() const;

  void set_observer(ModuleObserver observer) { observer_ = std::move(observer); }

 private:
  int64_t patch_;
  int64_t dim_;
  std::vector<torch::nn::Linear> embed_;
  std::vector<CrateModule> modules_;
  torch::nn::Linear unembed_{nullptr};
  ModuleObserver observer_;
};
TORCH_MODULE(CrateLayer);

}  // namespace ccdepth::crate

#pragma once

// Common interface of the variational last-layer heads. A head contributes two
// terms to the training objective, both oriented to be maximized:
//   loss        the batch-mean expected log-likelihood bound,
//   regularizer (lambda / T)(-KL(q || p)) + (1/T) log p(Sigma).

#include <memory>
#include <string>
#include <vector>

#include "vbll/autodiff.hpp"
#include "vbll/checkpoint.hpp"
#include "vbll/data.hpp"
#include "vbll/hyperparams.hpp"

namespace vbll {

enum class HeadKind { regression, discriminative, generative };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

struct RegularizerTerms {
  ad::Var total;
  ad::Var kl;
  ad::Var noise_log_prior;
};

class VariationalHead {
 public:
  virtual ~VariationalHead() = default;

  virtual HeadKind kind() const = 0;
  virtual Index feature_dim() const = 0;
  /// Number of outputs (regression) or classes.
  virtual Index output_dim() const = 0;

  /// Batch-mean bound for features (B x N_phi) and the matching batch rows.
  virtual ad::Var loss(ad::Tape& tape, ad::Var features, const Dataset& batch) = 0;
  virtual RegularizerTerms regularizer(ad::Tape& tape, double dataset_size, double kl_weight) = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
  /// Subset of parameters() holding the noise covariance.
  virtual std::vector<ad::Parameter*> noise_parameters() = 0;
  /// Sets the last-layer mean (class means for the generative head) from a
  /// point estimate, e.g. a pretrained deterministic last layer.
  virtual void initialize_mean(const Matrix& mean) = 0;
  /// Full-dataset statistics computed once before training (class counts).
  virtual void prepare(const Dataset& /*full*/) {}

  virtual Json to_json() const = 0;
  virtual std::unique_ptr<VariationalHead> clone() const = 0;

  const HeadPriors& priors() const { return priors_; }
  void set_priors(const HeadPriors& priors) { priors_ = priors; }

 protected:
  explicit VariationalHead(HeadPriors priors) : priors_(priors) {}
  HeadPriors priors_;
};

/// Restores any head from its checkpoint.
std::unique_ptr<VariationalHead> head_from_json(const Json& j);

}  // namespace vbll

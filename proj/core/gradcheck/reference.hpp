#pragma once

// Double-precision transcriptions of the model math, written as plain loops
// independent of the float32 engine. They serve as the value oracles for the
// loss equations and as the forward function differentiated by the
// finite-difference gradient checks.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wavesplit/data.hpp"
#include "wavesplit/model.hpp"
#include "wavesplit/objective.hpp"

namespace wavesplit::refk {

using dvec = std::vector<double>;

dvec conv1d(const dvec& x, std::int64_t T, std::int64_t c_in, const dvec& w, std::int64_t K,
            std::int64_t c_out, const dvec& b, std::int64_t dilation);
dvec layer_norm(const dvec& x, std::int64_t T, std::int64_t C, const dvec& gain,
                const dvec& shift, double eps = 1e-5);
dvec prelu(const dvec& x, std::int64_t T, std::int64_t C, const dvec& slope);
dvec l2_normalize(const dvec& x, std::int64_t rows, std::int64_t d, double eps = 1e-8);
double log_sum_exp(const dvec& v);
dvec linear(const dvec& x, std::int64_t T, std::int64_t c_in, const dvec& w, std::int64_t c_out,
            const dvec& b);
dvec rowwise_affine(const dvec& x, std::int64_t T, std::int64_t C, const dvec& a, const dvec& b);

double sqdist(const double* a, const double* b, std::int64_t d);

// Eq-style losses.
double distance_loss(const double* h_j, const double* e, const double* h_all, std::int64_t n,
                     std::int64_t d, std::int64_t j);
double classifier_loss(const double* h_j, std::int64_t target, const double* table,
                       std::int64_t rows, std::int64_t d, double alpha, double beta);

// Exhaustive-permutation speaker loss; optionally returns the argmin per t.
double speaker_loss(const dvec& h, std::int64_t T, std::int64_t N, std::int64_t d,
                    const std::vector<std::int64_t>& sel, const dvec& embeddings, std::int64_t M,
                    double alpha, double beta, SpeakerLossVariant variant,
                    std::vector<std::int32_t>* perms_out = nullptr);

dvec training_centroids(const dvec& h, std::int64_t T, std::int64_t N, std::int64_t d,
                        const std::vector<std::int32_t>& perms);

double sdr(const dvec& est, const dvec& ref);
double clipped_neg_sdr_mean(const dvec& est, const dvec& ref, std::int64_t T, std::int64_t N,
                            double tau);
double reconstruction_loss(const std::vector<dvec>& layers, const dvec& ref, std::int64_t T,
                           std::int64_t N, double tau);
double embedding_entropy(const dvec& e, std::int64_t m, std::int64_t d);

// Double mirror of a model's parameters, keyed like named_parameters().
struct RefModel {
  ModelConfig cfg;
  std::map<std::string, dvec> params;

  static RefModel from(const WavesplitModel& model);
  const dvec& at(const std::string& name) const;
};

// Speaker-stack forward: mixture -> T x N x d unit-norm vectors.
dvec speaker_stack(const RefModel& m, const dvec& x);
// Separation-stack forward conditioned on flattened centroids (N*d).
std::vector<dvec> separation_stack(const RefModel& m, const dvec& x, const dvec& centroids);

// Full objective; `plan` may be null (no centroid regularization).
double total_loss(const RefModel& m, const MixtureExample& example, const LossWeights& weights,
                  const CentroidRegularizerPlan* plan);

}  // namespace wavesplit::refk

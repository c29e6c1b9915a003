#pragma once
// Executable checks of the reader's stability and propagation bounds. Every
// check is a pure function of its inputs and seed and returns a CheckReport;
// a violation carries the first counterexample.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/reader.hpp"

namespace sage::diag {

struct CheckReport {
    std::string name;
    std::size_t trials = 0;
    std::size_t violations = 0;
    std::size_t skipped = 0;        // trials outside the statement's hypothesis
    double min_slack = 0.0;         // bound - observed, over evaluated trials
    double max_slack = 0.0;
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json extra = nlohmann::json::object();
    nlohmann::json counterexample;  // null when no violation

    bool passed() const { return violations == 0; }
    nlohmann::json to_json() const;
};

// Rounding allowance for bounds evaluated in double precision.
inline constexpr double kRoundTol = 1e-14;

// ---- softmax, gate and soft-retrieval stability -------------------------

struct StabilityParams {
    double delta = 0.1;         // gate bound under test
    double eta = 0.5;           // activation exponent
    double eps_p = 1e-6;        // activation floor
    std::size_t max_nodes = 40;
    double gate_scale = 4.0;    // spread of the random gate output layer
};

CheckReport check_softmax_lipschitz(std::size_t trials, std::uint64_t seed, const StabilityParams& p = {});
CheckReport check_gate_bound(std::size_t trials, std::uint64_t seed, const StabilityParams& p = {});
CheckReport check_soft_retrieval(std::size_t trials, std::uint64_t seed, const StabilityParams& p = {});
std::vector<CheckReport> check_stability_suite(std::size_t trials, std::uint64_t seed, const StabilityParams& p = {});

// ---- hard top-k boundary -------------------------------------------------

// perturb_scale > 1 draws perturbations beyond eps (used as a failure fixture).
CheckReport check_topk_boundary(const std::vector<double>& s, double eps, std::size_t k, std::size_t trials,
                                std::uint64_t seed, double perturb_scale = 1.0);
// Every corner of the box s +- eps (requires s.size() <= 20).
CheckReport check_topk_boundary_corners(const std::vector<double>& s, double eps, std::size_t k);
// Random score vectors, eps and k.
CheckReport check_topk_boundary_random(std::size_t trials, std::uint64_t seed, double perturb_scale = 1.0);

// ---- influence cone ------------------------------------------------------

enum class EditKind { AddEdge, RemoveEdge, NodeFeature, None };

struct GraphEdit {
    EditKind kind = EditKind::None;
    std::size_t u = 0, v = 0;  // v unused for NodeFeature
    double magnitude = 1.0;    // NodeFeature only
};

struct ConeTrial {
    bool skipped = false;          // realized gate-input radius exceeded r_z
    std::size_t gate_radius = 0;   // realized radius of gate-input changes
    std::size_t influence_radius = 0;  // largest distance at which h changed
    std::size_t checked = 0;       // nodes outside the cone
    std::size_t violations = 0;
    double max_outside_diff = 0.0;
    nlohmann::json counterexample;
};

// Runs the gated and schema channels on sg and on sg with the edit applied,
// using identical inputs, graph summary and normalisation statistics.
// H0 must be [n, params.cfg.hidden].
ConeTrial influence_cone_trial(const StructuralGraph& sg, ReaderParams& params, const nn::Tensor& H0,
                               const GraphEdit& edit, std::size_t r_z);

CheckReport check_influence_cone(const StructuralGraph& sg, ReaderParams& params, const nn::Tensor& H0,
                                 const GraphEdit& edit, std::size_t r_z);
// Random graphs and edits; L is taken from the reader configuration built here.
CheckReport check_influence_cone_random(std::size_t trials, std::uint64_t seed, std::size_t L, std::size_t r_z);

// Distances from a source set (SIZE_MAX when unreachable).
std::vector<std::size_t> bfs_distances(const StructuralGraph& sg, const std::vector<std::size_t>& sources);

// ---- aggregate signal / noise recurrence --------------------------------

using Matrix = std::vector<std::vector<double>>;  // row-major, square

struct BlockCoefficients {
    double A = 0.0;  // min column sum of T_RR
    double B = 0.0;  // max column sum of T_(~R)(~R)
    double C = 0.0;  // max column sum of T_(~R)R
    double xi = 0.0;
};

// R marks the evidence region (true = in R_q).
BlockCoefficients block_coefficients(const Matrix& T, const std::vector<char>& R);

// Q_L bound for Q_0 and per-layer coefficients (xi = 0).
double snr_inverse_bound(const std::vector<BlockCoefficients>& coeffs, double Q0);

CheckReport snr_recurrence_check(const std::vector<Matrix>& T, const std::vector<char>& R,
                                 const std::vector<double>& signal0, std::size_t trials, std::uint64_t seed);
// Random nonnegative operators of n nodes and L layers, fresh each trial.
CheckReport snr_recurrence_random(std::size_t trials, std::uint64_t seed, std::size_t n, std::size_t L);

// ---- retrieval budget ----------------------------------------------------

struct BudgetResult {
    bool applicable = false;  // tau > 0 and all distractor scores >= 0
    std::size_t m = 0;
    std::size_t budget = 0;   // realized; ties resolved against the gold docs
    double tau = 0.0;
    double distractor_mass = 0.0;
    double bound = 0.0;
};

BudgetResult budget_bound(const std::vector<double>& scores, const std::vector<char>& gold, double rho);
CheckReport budget_bound_check(const std::vector<double>& scores, const std::vector<char>& gold, double rho);
CheckReport budget_bound_random(std::size_t trials, std::uint64_t seed);

// Realized projection constants of the budget theorem for one instance:
// K = M^- / N_L and c = tau * m / S_L, where S_L and N_L are the entity
// score masses inside and outside the evidence region.
struct ProjectionRatios {
    double S = 0.0, N = 0.0, M_minus = 0.0, tau = 0.0;
    double K = 0.0, c = 0.0;
    std::size_t m = 0;
};
ProjectionRatios projection_ratios(const std::vector<double>& entity_scores, const std::vector<char>& R,
                                   const std::vector<double>& doc_scores, const std::vector<char>& gold, double rho);

// ---- graph drift ---------------------------------------------------------

struct DriftMeasure {
    double dX = 0.0, dA = 0.0, dSeed = 0.0, dZ = 0.0, dB = 0.0;
    double total() const { return dX + dA + dSeed + dZ + dB; }
    nlohmann::json to_json() const;
};

struct DriftReport {
    DriftMeasure drift;
    double score_drift = 0.0;  // max |s_D - s'_D| over documents scored in both
    double ratio = 0.0;        // score_drift / total (0 when both are 0)
    std::size_t universe_entities = 0, universe_docs = 0;
    nlohmann::json to_json() const;
};

// Aligns entities by canonical name and documents by id; nodes missing from
// one side are isolated padding nodes there. Throws std::invalid_argument when
// a shared document id carries different text.
DriftReport drift_measure(const PreparedGraph& g, const PreparedGraph& g2, std::string_view question,
                          const QueryPlan& plan, const TextEmbedder& emb, ReaderParams& params,
                          DocScoreMode mode = DocScoreMode::Raw);

// ---- suite ---------------------------------------------------------------

struct SuiteConfig {
    std::size_t trials = 1000;
    std::uint64_t seed = 2024;
    StabilityParams stability;
    std::size_t cone_layers = 2;
    std::size_t cone_rz = 1;
    std::size_t snr_nodes = 12;
    std::size_t snr_layers = 3;
    double topk_perturb_scale = 1.0;  // > 1 injects violations

    nlohmann::json to_json() const;
    static SuiteConfig from_json(const nlohmann::json& j);  // rejects unknown keys
};

std::vector<CheckReport> run_suite(const SuiteConfig& cfg);
nlohmann::json suite_report(const std::vector<CheckReport>& reports);

}  // namespace sage::diag

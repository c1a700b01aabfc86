#pragma once

#include <string>
#include <vector>

#include "mswq/dynamics.hpp"
#include "mswq/linearize.hpp"

namespace mswq {

/// Which input columns are excited when collecting snapshots. Columns follow
/// the model's full input layout [u1; u2; constant channels], followed by one
/// extra column for the linearization constant when the source is linearized.
struct Excitation {
  enum class Kind { Impulse, Step } kind = Kind::Impulse;
  Vec amplitude;            // per column; empty means 1 everywhere
  bool per_channel = true;  // one run per excited column, concatenated
  bool add_joint = false;   // with per_channel, one more run exciting all columns together
};

/// Default excitation: boosters at `impulse_ratio` times the other channels.
Excitation default_excitation(const FullOrderModel& model, double impulse_ratio, bool include_phi);
/// Excitation for nonlinear snapshots. Unless the constant channel carries
/// both species (non-zero initial state), they only meet when injected
/// together, so a joint run is added.
Excitation nonlinear_excitation(const FullOrderModel& model, double impulse_ratio);

struct SnapshotSet {
  Mat X;  // states, one column per recorded step
  Mat F;  // nonlinear term along the same runs (nonlinear sources only)
  Mat P;  // adjoint snapshots (BPOD only), output-major
  int m = 0;
  std::string excitation;
};

SnapshotSet collect_state_snapshots(const FullOrderModel& model, const Excitation& ex, int m, bool keep_nonlinear);
/// Appends replayed trajectory states (and their nonlinear terms) as extra snapshot columns.
void append_snapshots(SnapshotSet& s, const Mat& states, const Mat& nonlinear = Mat());
SnapshotSet collect_state_snapshots(const LinearizedModel& lm, const Excitation& ex, int m);

/// Adjoint impulse responses p(k+1) = A^T E^{-T} p(k), p(0) = C^T e_j, over the
/// hydraulic slice in effect at step 0. Extra rows are appended to C for
/// snapshot collection only.
Mat collect_adjoint_snapshots(const LinearizedModel& lm, int m, const Mat& extra_rows = Mat());

struct TransformPair {
  Mat V;  // 2n_x x n_r
  Mat L;  // n_r x 2n_x
  int n_r = 0;
  Vec values;  // retained eigen- or singular values
  std::string method;
  bool left_through_E = false;  // L acts on E^{-1}-premultiplied equations
};

/// Count of eigen-/singular values above rel_tol times the largest.
int numerical_rank(const Vec& values, double rel_tol);

/// POD via the snapshot Gramian. Eigenvalues below 1e-12 of the largest are
/// treated as zero.
TransformPair pod_transform(const Mat& X, int n_r);
/// Numerical rank of X as seen by pod_transform.
int pod_rank(const Mat& X);

/// Balanced POD from impulse snapshots X and adjoint snapshots P.
TransformPair bpod_transform(const Mat& X, const Mat& P, int n_r);
int hankel_rank(const Mat& X, const Mat& P);

/// Lower bound on the snapshot length: the longest booster-to-sensor travel
/// time in water-quality steps under the flow directions of the first slice.
int min_snapshot_length(const FullOrderModel& model);

struct DeimData {
  Mat U;                     // 2n_x x n_d interpolation basis
  std::vector<int> indices;  // selected rows, in selection order
  Mat KtU_inv;               // (K^T U)^{-1}
};

DeimData greedy_deim(const Mat& F, int n_d);
/// Numerical rank of F as used by greedy_deim (singular values above 1e-12 of the largest).
int deim_rank(const Mat& F);
/// Reconstruction U (K^T U)^{-1} K^T f.
Vec deim_reconstruct(const DeimData& d, const Vec& f);

struct ReducedSlice {
  Mat Er, Ar, Br, Cr, D;
  Vec h;
  Mat M;      // E_r^{-1} A_r
  Mat N;      // E_r^{-1} B_r
  Mat Gs;     // E_r^{-1} W_s where W_s sums the left-basis columns of both species per bilinear element
  Mat V1, V2; // bilinear element rows of V_r for each species (n_b x n_r)
  Vec alpha;  // per bilinear element
  Vec off1, off2;  // state offset at bilinear elements (model coordinates to physical)
  // DEIM evaluation (nonlinear models)
  Mat Wf;                 // E_r^{-1} W U (K^T U)^{-1}
  Mat Vd1, Vd2;           // rows of V_r for the element behind each DEIM index
  Vec alpha_d;
};

struct ReducedModel {
  enum class Kind { Linear, Linearized, Nonlinear } kind = Kind::Linear;
  TransformPair pair;
  DeimData deim;
  std::vector<ReducedSlice> slices;
  int n_r = 0;
  int n_inputs = 0;
  int n_const = 0;
  int steps_per_slice = 1;
  double dt = 5.0;
  Vec x_offset;

  const ReducedSlice& slice_for_step(int k) const;
  std::size_t slice_index(int k) const;
  Vec full_input(const Vec& u) const;
  Vec project_state(const Vec& x_model) const { return pair.L * x_model; }
  Vec lift_state(const Vec& xr) const { return pair.V * xr; }
};

/// Projects every hydraulic slice of a model. DEIM data must be supplied for
/// nonlinear reduction and be empty otherwise.
ReducedModel reduce_model(const FullOrderModel& model, const TransformPair& pair, const DeimData* deim = nullptr);
ReducedModel reduce_model(const LinearizedModel& lm, const TransformPair& pair);

/// Reduced linearized dynamics with lazily refreshed coefficient rows.
class LinearizedRomStepper {
 public:
  explicit LinearizedRomStepper(const ReducedModel& rom) : rom_(&rom) {}
  /// Installs coefficients for step k; only changed elements are rewritten.
  void set_coefficients(const LinearCoefficients& c, int k);
  Vec step(const Vec& xr, const Vec& u, int k);
  std::size_t rewrites() const { return rewrites_; }

 private:
  const ReducedModel* rom_;
  std::size_t slice_ = static_cast<std::size_t>(-1);
  Mat M_;
  Vec phi_r_;
  Vec d_self_, d_other_, phi_;
  std::size_t rewrites_ = 0;
};

/// One reduced step for linear and nonlinear (DEIM) reduced models.
Vec reduced_step(const ReducedModel& rom, const Vec& xr, const Vec& u, int k);
Vec reduced_output(const ReducedModel& rom, const Vec& xr, const Vec& u, int k);

/// Simulates a reduced model from xr0. For linearized models the operating
/// schedule supplies the coefficients at each step.
Mat simulate_reduced(const ReducedModel& rom, const Vec& xr0, const Mat& U, int n_steps,
                     const LinearizedModel* lm = nullptr);

double rmse(const Mat& y_fom, const Mat& y_rom);

// Binary caches: little-endian, 8-byte magic, u32 version, then payload.
void write_snapshot_cache(const std::string& path, const SnapshotSet& s);
SnapshotSet read_snapshot_cache(const std::string& path);
void write_transform_cache(const std::string& path, const TransformPair& pair, const DeimData* deim, int n_x);
TransformPair read_transform_cache(const std::string& path, DeimData* deim, int* n_x);

}  // namespace mswq

#pragma once

namespace nlgmp {

/// Numerical tolerances shared by the message-passing operations.
///
/// All checks scale with `scale` (see NLGMP_TOLERANCE_SCALE in the CLI),
/// which loosens or tightens every threshold uniformly. Mutate only at
/// startup; the rest of the library reads these concurrently.
struct ToleranceConfig {
    double symmetry = 1e-10;        // relative asymmetry allowed in covariance matrices
    double psd_eig = 1e-10;         // relative negative-eigenvalue slack in invariant checks
    double psd_clip = 1e-8;         // relative eigenvalue magnitude repairable by clipping
    double rcond_min = 1e-14;       // reciprocal condition number below which solves fail
    double variance_floor = 1e-14;  // smallest smoothed variance kept on the diagonal
    double scale = 1.0;

    double scaled_symmetry() const { return symmetry * scale; }
    double scaled_psd_eig() const { return psd_eig * scale; }
    double scaled_psd_clip() const { return psd_clip * scale; }
    double scaled_rcond_min() const { return rcond_min * scale; }
};

inline ToleranceConfig& tolerances() {
    static ToleranceConfig config;
    return config;
}

}  // namespace nlgmp

"""Lifetime fits of TCSPC histograms with a Gaussian instrument response.

Each exponential component convolved with a Gaussian IRF is an
exponentially-modified Gaussian; the model integrates it exactly over every
bin via its survival function, so bin width introduces no bias. Fits
minimise the Poisson deviance (least squares on deviance residuals), which
makes them maximum-likelihood for counting data.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import log_ndtr, ndtr

from ..correlator import LifetimeHistogram
from ..errors import FitError, InsufficientDataError, InsufficientDecayError, ValidationError

FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))
MIN_COUNTS = 1000
# auto policy: bi-exponential must cut reduced chi-square by this fraction
BI_IMPROVEMENT = 0.20
# ... and every component must carry at least this share of the amplitude
BI_MIN_FRACTION = 0.05
DEFAULT_TAIL_OFFSET_PS = 1000
MAX_NFEV = 4000


@dataclass(frozen=True)
class DecayFitResult:
    """Outcome of a lifetime fit. Times in ns, amplitudes in counts per bin.

    ``amplitudes`` are the peak heights of each unconvolved exponential at
    time zero, i.e. the IRF-deconvolved peak PL amplitude. Components are
    ordered fast first. ``collapsed`` marks a requested bi-exponential fit
    whose components could not be told apart and was reported as mono.
    """

    model: str
    lifetimes_ns: tuple
    amplitudes: tuple
    background: float
    uncertainties_ns: tuple
    goodness: float
    time_zero_ns: float
    amplitude_uncertainties: tuple = ()
    collapsed: bool = False
    chi2_mono: float | None = None
    chi2_bi: float | None = None
    counts: int = 0
    window_ns: tuple = ()
    notes: tuple = field(default=())

    @property
    def lifetime_ns(self) -> float:
        """Effective lifetime: the fast component."""
        return self.lifetimes_ns[0]

    @property
    def lifetime_uncertainty_ns(self) -> float:
        return self.uncertainties_ns[0]

    @property
    def peak_amplitude(self) -> float:
        return float(sum(self.amplitudes))


def _survival(x, tau, sigma):
    """P(T > x) for T = exponential(tau) + normal(0, sigma)."""
    if sigma <= 0:
        return np.where(x > 0, np.exp(-np.clip(x, 0, None) / tau), 1.0)
    z = x / sigma
    log_tail = -x / tau + sigma**2 / (2 * tau**2) + log_ndtr(z - sigma / tau)
    return ndtr(-z) + np.exp(log_tail)


class _Model:
    """Binned multi-exponential-plus-background model.

    Parameter vector: ``[t0, bg, area_1, tau_1, ...]`` or, with ``t0`` fixed,
    ``[bg, area_1, tau_1, ...]``. Areas are total photon counts per component.
    """

    def __init__(self, edges_ns, sigma_ns, n_comp, t0_fixed=None):
        self.lo = edges_ns[:-1]
        self.hi = edges_ns[1:]
        self.sigma = sigma_ns
        self.n_comp = n_comp
        self.t0_fixed = t0_fixed

    def unpack(self, p):
        if self.t0_fixed is None:
            t0, bg, rest = p[0], p[1], p[2:]
        else:
            t0, bg, rest = self.t0_fixed, p[0], p[1:]
        return t0, bg, rest[0::2], rest[1::2]

    def __call__(self, p):
        t0, bg, areas, taus = self.unpack(p)
        out = np.full(self.lo.shape, bg, dtype=float)
        for a, tau in zip(areas, taus):
            out += a * (_survival(self.lo - t0, tau, self.sigma) - _survival(self.hi - t0, tau, self.sigma))
        return out


def _deviance_residuals(model, y):
    def resid(p):
        m = np.maximum(model(p), 1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            ylog = np.where(y > 0, y * np.log(y / m), 0.0)
        d = np.clip(2 * (m - y + ylog), 0, None)
        return np.sign(m - y) * np.sqrt(d)

    return resid


def _pearson_chi2(y, m, n_par):
    m = np.maximum(m, 1e-12)
    dof = max(len(y) - n_par, 1)
    return float(np.sum((y - m) ** 2 / m) / dof)


def _tail_guess(t, y, bg, start):
    """Weighted log-linear fit of background-subtracted tail counts -> tau."""
    s = y[start:] - bg
    tt = t[start:]
    ok = s > max(5.0, 3 * math.sqrt(max(bg, 1.0)))
    if np.count_nonzero(ok) < 3:
        return None
    tt, s = tt[ok], s[ok]
    slope, _ = np.polyfit(tt, np.log(s), 1, w=np.sqrt(s))
    if slope >= 0:
        return None
    return -1.0 / slope


def _fit(model, y, x0, lower, upper):
    resid = _deviance_residuals(model, y)
    x0 = np.clip(x0, lower + 1e-9 * (1 + np.abs(lower)), upper - 1e-9 * (1 + np.abs(upper)))
    res = least_squares(resid, x0, bounds=(lower, upper), method="trf", x_scale="jac", max_nfev=MAX_NFEV)
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitError(
            f"lifetime fit did not converge: {res.message}",
            {"status": res.status, "nfev": res.nfev, "x": res.x.tolist(), "cost": float(res.cost)},
        )
    jac = res.jac
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jac.T @ jac)
    return res, cov


@dataclass
class _Candidate:
    model: str
    params: np.ndarray
    cov: np.ndarray
    chi2: float
    cost: float
    fit_model: _Model


def fit_decay(
    hist: LifetimeHistogram,
    irf_fwhm_ps: float | None = 500.0,
    model_policy: str = "auto",
    tail_offset_ps: float = DEFAULT_TAIL_OFFSET_PS,
) -> DecayFitResult:
    """Fit a mono- or bi-exponential decay to a lifetime histogram.

    With a known IRF the fit covers the rise and the decay and floats the time
    origin. With ``irf_fwhm_ps=None`` only the tail from ``tail_offset_ps``
    after the peak is fitted. ``model_policy`` is ``"mono"``, ``"bi"``, or
    ``"auto"``; auto keeps the bi-exponential only if it lowers reduced
    chi-square by more than 20 % and each component holds over 5 % of the
    amplitude. A bi-exponential whose lifetimes differ by less than twice
    their combined uncertainty is reported as mono.
    """
    if model_policy not in ("mono", "bi", "auto"):
        raise ValidationError(f"unknown model policy {model_policy!r}")
    y_all = np.asarray(hist.counts, dtype=float)
    total = float(y_all.sum())
    if total < MIN_COUNTS:
        raise InsufficientDataError(f"histogram holds {int(total)} counts, need {MIN_COUNTS}")

    bw_ns = hist.bin_width_ps / 1000.0
    edges = np.arange(len(y_all) + 1) * bw_ns
    centers = edges[:-1] + bw_ns / 2
    smooth = np.convolve(y_all, np.ones(3) / 3, mode="same")
    peak = int(np.argmax(smooth))

    fwhm_ns = (irf_fwhm_ps or 0.0) / 1000.0
    rise_bins = int(math.ceil(3 * max(fwhm_ns, bw_ns) / bw_ns))
    pre = y_all[: max(peak - rise_bins, 0)]
    late = y_all[int(0.8 * len(y_all)) :]
    bg0 = float(np.mean(pre)) if len(pre) >= 5 else float(np.mean(late))
    signal = total - bg0 * len(y_all)
    if signal < 5 * math.sqrt(total) + 10:
        raise InsufficientDecayError(
            f"no decay above background ({signal:.0f} net counts of {int(total)})"
        )

    if irf_fwhm_ps:
        start = max(0, peak - rise_bins)
        sigma_ns = fwhm_ns / FWHM_PER_SIGMA
        t0_fixed = None
    else:
        start = min(peak + int(math.ceil(tail_offset_ps / hist.bin_width_ps)), len(y_all) - 10)
        sigma_ns = 0.0
        t0_fixed = edges[start]
    y = y_all[start:]
    if y.sum() < MIN_COUNTS:
        raise InsufficientDataError(f"fit window holds {int(y.sum())} counts, need {MIN_COUNTS}")
    win_edges = edges[start:]

    tail_start = min(peak + int(math.ceil(2 * max(fwhm_ns, 0.5) / bw_ns)), len(y_all) - 3)
    tau0 = _tail_guess(centers, y_all, bg0, max(tail_start, start)) or 1.0
    tau0 = float(np.clip(tau0, 0.05, 20.0))
    t_peak = centers[peak]
    net = max(float(y.sum()) - bg0 * len(y), 10.0)

    span = win_edges[-1] - win_edges[0]
    bg_hi = max(10.0 * bg0 + 10.0, float(y.max()))
    area_hi = 10.0 * total + 10.0

    def bounds(n_comp):
        lo_tail = [0.0, 0.0, 1e-3] + [0.0, 1e-3] * (n_comp - 1)
        hi_tail = [bg_hi, area_hi, 10 * span] + [area_hi, 10 * span] * (n_comp - 1)
        if t0_fixed is None:
            return (
                np.array([win_edges[0] - 2.0, *lo_tail]),
                np.array([win_edges[-1], *hi_tail]),
            )
        return np.array(lo_tail), np.array(hi_tail)

    def head(t0):
        return [t0, bg0] if t0_fixed is None else [bg0]

    t0_guess = t_peak - 0.5 * (sigma_ns if sigma_ns else 0.0)
    mono_model = _Model(win_edges, sigma_ns, 1, t0_fixed)
    res, cov = _fit(mono_model, y, np.array(head(t0_guess) + [net, tau0]), *bounds(1))
    mono = _Candidate("mono", res.x, cov, _pearson_chi2(y, mono_model(res.x), len(res.x)), res.cost, mono_model)

    bi = None
    if model_policy in ("bi", "auto"):
        t0_m = mono.params[0] if t0_fixed is None else None
        tau_m = mono.params[-1]
        bi_model = _Model(win_edges, sigma_ns, 2, t0_fixed)
        best = None
        for f_fast, r_fast, r_slow in ((0.5, 0.4, 1.6), (0.3, 0.25, 1.2), (0.7, 0.6, 2.5), (0.5, 0.15, 1.05)):
            x0 = head(t0_m if t0_m is not None else 0.0) + [
                net * f_fast, tau_m * r_fast, net * (1 - f_fast), tau_m * r_slow,
            ]
            try:
                r, c = _fit(bi_model, y, np.array(x0), *bounds(2))
            except FitError:
                continue
            if best is None or r.cost < best[0].cost:
                best = (r, c)
        if best is not None:
            r, c = best
            bi = _Candidate("bi", r.x, c, _pearson_chi2(y, bi_model(r.x), len(r.x)), r.cost, bi_model)
        elif model_policy == "bi":
            raise FitError("bi-exponential fit failed from every starting point")

    window = (float(win_edges[0]), float(win_edges[-1]))
    mono_result = _to_result(mono, bw_ns, int(y.sum()), window, mono.chi2, bi.chi2 if bi else None)
    if bi is None:
        return mono_result
    bi_result = _to_result(bi, bw_ns, int(y.sum()), window, mono.chi2, bi.chi2)

    taus, sig = bi_result.lifetimes_ns, bi_result.uncertainties_ns
    distinct = (taus[1] - taus[0]) >= 2 * math.hypot(*sig) and all(np.isfinite(sig))
    if model_policy == "bi":
        if distinct:
            return bi_result
        return dataclasses.replace(mono_result, collapsed=True, notes=("bi-exponential components not distinct",))

    amps = np.array(bi_result.amplitudes)
    share_ok = amps.min() > BI_MIN_FRACTION * amps.sum()
    improved = (mono.chi2 - bi.chi2) > BI_IMPROVEMENT * mono.chi2
    if improved and share_ok and distinct:
        return bi_result
    return mono_result


def _to_result(cand, bw_ns, counts, window, chi2_mono, chi2_bi):
    m = cand.fit_model
    t0, bg, areas, taus = m.unpack(cand.params)
    off = 0 if m.t0_fixed is not None else 1
    var = np.diag(cand.cov)
    comps = []
    for i, (a, tau) in enumerate(zip(areas, taus)):
        ia, it = off + 1 + 2 * i, off + 2 + 2 * i
        # peak counts per bin of the unconvolved exponential at t0
        frac = -math.expm1(-bw_ns / tau)
        amp = a * frac
        d_tau = a * (-bw_ns / tau**2) * math.exp(-bw_ns / tau)
        amp_var = frac**2 * var[ia] + d_tau**2 * var[it] + 2 * frac * d_tau * cand.cov[ia, it]
        comps.append((float(tau), float(amp), math.sqrt(max(var[it], 0.0)), math.sqrt(max(amp_var, 0.0))))
    comps.sort(key=lambda c: c[0])
    return DecayFitResult(
        model=cand.model,
        lifetimes_ns=tuple(c[0] for c in comps),
        amplitudes=tuple(c[1] for c in comps),
        background=float(bg),
        uncertainties_ns=tuple(c[2] for c in comps),
        goodness=cand.chi2,
        time_zero_ns=float(t0),
        amplitude_uncertainties=tuple(c[3] for c in comps),
        chi2_mono=chi2_mono,
        chi2_bi=chi2_bi,
        counts=counts,
        window_ns=window,
    )

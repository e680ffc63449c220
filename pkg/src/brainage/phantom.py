"""Synthetic age-encoding phantoms and twin cohorts.

A phantom is a noisy ellipsoidal "brain" whose cortical intensity fades
with age while a central zero-intensity "ventricle" grows, so both a
geometric and an intensity cue carry the age signal. Twin cohorts perturb
the rendered age by latent offsets with a configured A/C/E variance
structure, which makes brain-PAD of a good predictor inherit that
structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .manifest import ManifestRow
from .volume import Volume3D

_REFERENCE_AGE = 18.0
_AGE_SPAN = (18.0, 90.0)  # nesting invariant is enforced over this range


@dataclass(frozen=True)
class PhantomParams:
    dims: tuple[int, int, int] = (32, 32, 32)
    brain_radii: tuple[float, float, float] = (13.0, 13.0, 13.0)
    ventricle_base_radius: float = 2.0
    ventricle_growth_per_year: float = 0.09
    cortex_intensity_base: float = 0.95
    cortex_fade_per_year: float = 0.006
    noise_sd: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValidationError(f"dims must be 3 positive ints, got {self.dims}")
        if any(r <= 0 for r in self.brain_radii):
            raise ValidationError("brain radii must be positive")
        if self.ventricle_growth_per_year <= 0:
            raise ValidationError("ventricle_growth_per_year must be > 0")
        if self.cortex_fade_per_year < 0 or self.noise_sd < 0:
            raise ValidationError("fade and noise_sd must be nonnegative")
        if self.ventricle_base_radius <= 0:
            raise ValidationError("ventricle_base_radius must be positive")
        max_rv = self.ventricle_base_radius + self.ventricle_growth_per_year * (
            _AGE_SPAN[1] - _REFERENCE_AGE
        )
        if max_rv >= min(self.brain_radii):
            raise ValidationError(
                f"ventricle radius reaches {max_rv:.2f} voxels at age "
                f"{_AGE_SPAN[1]:.0f}, not strictly inside brain radii "
                f"{self.brain_radii}"
            )


@dataclass(frozen=True)
class TwinSimParams:
    n_mz: int
    n_dz: int
    a2: float
    c2: float
    e2: float
    age_range: tuple[float, float] = (18.0, 90.0)
    offset_sd: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.n_mz < 0 or self.n_dz < 0:
            raise ValidationError("pair counts must be nonnegative")
        if min(self.a2, self.c2, self.e2) < 0:
            raise ValidationError("variance fractions must be nonnegative")
        if abs(self.a2 + self.c2 + self.e2 - 1.0) > 1e-12:
            raise ValidationError(
                f"a2 + c2 + e2 must sum to 1, got {self.a2 + self.c2 + self.e2}"
            )
        if self.offset_sd < 0:
            raise ValidationError("offset_sd must be nonnegative")


@dataclass(frozen=True)
class ScannerEffect:
    gain: float = 1.0
    bias_field_amplitude: float = 0.0
    extra_noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gain <= 0:
            raise ValidationError(f"gain must be positive, got {self.gain}")
        if self.bias_field_amplitude < 0 or self.extra_noise_sd < 0:
            raise ValidationError("amplitude and noise must be nonnegative")


def _centered_coords(dims):
    return [
        np.arange(d, dtype=np.float64) - (d - 1) / 2.0 for d in dims
    ]


def generate_phantom(age: float, params: PhantomParams,
                     rng: np.random.Generator) -> Volume3D:
    """Render one phantom at the given (possibly latent) age."""
    if not 0.0 <= age <= 120.0:
        raise ValidationError(f"age {age} outside [0, 120]")

    uz, uy, ux = _centered_coords(params.dims)
    rz, ry, rx = params.brain_radii
    brain = (
        (uz[:, None, None] / rz) ** 2
        + (uy[None, :, None] / ry) ** 2
        + (ux[None, None, :] / rx) ** 2
    ) <= 1.0

    years = age - _REFERENCE_AGE
    r_vent = max(params.ventricle_base_radius
                 + params.ventricle_growth_per_year * years, 0.0)
    vent = (
        uz[:, None, None] ** 2
        + uy[None, :, None] ** 2
        + ux[None, None, :] ** 2
    ) <= r_vent ** 2

    intensity = params.cortex_intensity_base - params.cortex_fade_per_year * years
    data = np.where(brain & ~vent, intensity, 0.0)
    if params.noise_sd > 0:
        data = data + rng.normal(0.0, params.noise_sd, params.dims)
    data = np.clip(data, 0.0, 1.0)
    return Volume3D(
        dims=params.dims,
        voxel_size=(1.0, 1.0, 1.0),
        origin_offset=(0.0, 0.0, 0.0),
        data=data.astype(np.float32),
    )


def _cohort_row(subject_id: str, age: float, session: int = 1,
                pair_id: str = "NA", zygosity: str = "NA",
                site: str = "phantom") -> ManifestRow:
    return ManifestRow(
        subject_id=subject_id,
        volume_path="",
        age_years=float(age),
        sex="NA",
        site=site,
        session=session,
        pair_id=pair_id,
        zygosity=zygosity,
    )


def generate_cohort(n: int, age_range: tuple[float, float],
                    params: PhantomParams, rng: np.random.Generator):
    """n phantoms with ages uniform in age_range; returns (volumes, rows)."""
    if n < 1:
        raise ValidationError(f"cohort size must be >= 1, got {n}")
    lo, hi = float(age_range[0]), float(age_range[1])
    if not 0 <= lo <= hi <= 120:
        raise ValidationError(f"age range {age_range} invalid")
    ages = rng.uniform(lo, hi, n)
    volumes, rows = [], []
    for i, (age, child) in enumerate(zip(ages, rng.spawn(n))):
        volumes.append(generate_phantom(float(age), params, child))
        rows.append(_cohort_row(f"P{i:05d}", float(age)))
    return volumes, rows


def sample_twin_offsets(params: TwinSimParams, rng: np.random.Generator):
    """Latent age offsets (n_pairs, 2) plus zygosity labels.

    A is drawn once per MZ pair and with correlation 1/2 across DZ twins;
    C is shared within every pair; E is per twin. Offsets are scaled by
    offset_sd so their total variance is offset_sd^2.
    """
    sa, sc, se = np.sqrt([params.a2, params.c2, params.e2])
    offsets = []
    zygosities = []
    for _ in range(params.n_mz):
        a = rng.standard_normal()
        c = rng.standard_normal()
        e1, e2 = rng.standard_normal(2)
        offsets.append((sa * a + sc * c + se * e1, sa * a + sc * c + se * e2))
        zygosities.append("MZ")
    half = np.sqrt(0.5)
    for _ in range(params.n_dz):
        a_common = rng.standard_normal()
        a1, a2 = rng.standard_normal(2)
        c = rng.standard_normal()
        e1, e2 = rng.standard_normal(2)
        offsets.append((
            sa * (half * a_common + half * a1) + sc * c + se * e1,
            sa * (half * a_common + half * a2) + sc * c + se * e2,
        ))
        zygosities.append("DZ")
    return params.offset_sd * np.asarray(offsets, dtype=np.float64), zygosities


def generate_twin_cohort(params: TwinSimParams, phantom_params: PhantomParams,
                         rng: np.random.Generator):
    """Twin pairs: manifest rows carry the chronological age, volumes are
    rendered at age + offset. Returns (volumes, rows)."""
    n_pairs = params.n_mz + params.n_dz
    if n_pairs < 1:
        raise ValidationError("need at least one twin pair")
    lo, hi = params.age_range
    pair_ages = rng.uniform(lo, hi, n_pairs)
    offsets, zygosities = sample_twin_offsets(params, rng)
    children = rng.spawn(2 * n_pairs)

    volumes, rows = [], []
    for j in range(n_pairs):
        pair_id = f"PAIR{j:05d}"
        for t in range(2):
            rendered = float(np.clip(pair_ages[j] + offsets[j, t], 0.0, 120.0))
            volumes.append(
                generate_phantom(rendered, phantom_params, children[2 * j + t])
            )
            rows.append(
                _cohort_row(
                    f"T{j:05d}{'ab'[t]}",
                    float(pair_ages[j]),
                    pair_id=pair_id,
                    zygosity=zygosities[j],
                )
            )
    return volumes, rows


def generate_rescan_cohort(n: int, age_range: tuple[float, float],
                           params: PhantomParams, rng: np.random.Generator,
                           effect: ScannerEffect | None = None):
    """Two sessions per subject: same anatomy, fresh noise. If a scanner
    effect is given it is applied to session 2 (between-scanner regime)."""
    if n < 1:
        raise ValidationError(f"cohort size must be >= 1, got {n}")
    lo, hi = float(age_range[0]), float(age_range[1])
    ages = rng.uniform(lo, hi, n)
    children = rng.spawn(2 * n + n)  # per-session noise + per-subject effect
    volumes, rows = [], []
    for i in range(n):
        sid = f"R{i:05d}"
        for session in (1, 2):
            vol = generate_phantom(float(ages[i]), params, children[2 * i + session - 1])
            if session == 2 and effect is not None:
                vol = apply_scanner_effect(vol, effect, rng=children[2 * n + i])
            volumes.append(vol)
            rows.append(_cohort_row(sid, float(ages[i]), session=session,
                                    site="phantom" if session == 1 or effect is None
                                    else "phantom-b"))
    return volumes, rows


def apply_scanner_effect(volume: Volume3D, effect: ScannerEffect,
                         rng: np.random.Generator | None = None) -> Volume3D:
    """Gain times a smooth first-order bias field, plus noise, clipped.

    With all-neutral parameters the output is exactly the input.
    """
    if rng is None:
        rng = np.random.default_rng(effect.seed)
    data = volume.data.astype(np.float64)
    if effect.bias_field_amplitude > 0:
        coords = _centered_coords(volume.dims)
        norm = [u / max(u.max(), 1.0) for u in coords]
        coeffs = rng.uniform(-1.0, 1.0, 3)
        field = (
            coeffs[0] * norm[0][:, None, None]
            + coeffs[1] * norm[1][None, :, None]
            + coeffs[2] * norm[2][None, None, :]
        )
        data = data * (effect.gain * (1.0 + effect.bias_field_amplitude * field))
    elif effect.gain != 1.0:
        data = data * effect.gain
    if effect.extra_noise_sd > 0:
        data = data + rng.normal(0.0, effect.extra_noise_sd, volume.dims)
    if effect.gain == 1.0 and effect.bias_field_amplitude == 0 \
            and effect.extra_noise_sd == 0:
        return volume
    data = np.clip(data, 0.0, 1.0)
    return Volume3D(
        dims=volume.dims,
        voxel_size=volume.voxel_size,
        origin_offset=volume.origin_offset,
        data=data.astype(np.float32),
    )

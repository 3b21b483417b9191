//! The rotate-and-reproject objective and its hand-derived gradient.
//!
//! Per candidate, with `r = (0, 0, c)` the lifted root:
//!
//! ```text
//! P  = lift(y, d)                 Q = R (P - r) + r        ỹ = proj(Q)
//! T  = lift(ỹ, d')                B = Rᵀ (T - r) + r       p = proj(B)
//! ```
//!
//! where `d`, `d'` are the assembled depth offsets of the two lifting passes,
//! `R = R_elev(e) R_azim(a)` with `e` the candidate elevation and `a` a random
//! azimuth, and `proj` divides by `max(1, z)`. Loss terms: mean |p − y| over
//! non-root coordinates, mean |P − B|, the mean segment-flow NLL of `ỹ`,
//! adjacent-pair deformation between `P` and `B`, and the relative bone-length
//! deviation of `P`.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_backward, assemble_batch, poses_to_batch, Candidate, LifterSet, Plan};
use crate::error::{ensure_len, Error, Result};
use crate::flow::FlowSet;
use crate::geometry::{Pose2D, Pose3D, RotationParams, Segment, SkeletonTopology, MIN_DEPTH};
use crate::nn::Network;

pub const BONE_WEIGHT: f64 = 50.0;

type V3 = Vector3<f64>;

/// Loss terms of one candidate, each already averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_nf: f64,
    pub l_2d: f64,
    pub l_3d: f64,
    pub l_def: f64,
    pub l_b: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.l_nf + self.l_2d + self.l_3d + self.l_def + BONE_WEIGHT * self.l_b
    }

    pub(crate) fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.l_nf += w * other.l_nf;
        self.l_2d += w * other.l_2d;
        self.l_3d += w * other.l_3d;
        self.l_def += w * other.l_def;
        self.l_b += w * other.l_b;
    }
}

fn clamp_depth(z: f64) -> f64 {
    z.max(MIN_DEPTH)
}

struct StageOne {
    batch: usize,
    joints: usize,
    c: f64,
    p: Vec<V3>,
    active: Vec<bool>,
    rot: Vec<Matrix3<f64>>,
    d_rot: Vec<Matrix3<f64>>,
    q: Vec<V3>,
    virtual_2d: Array2<f64>,
}

struct StageTwo {
    t: Vec<V3>,
    active: Vec<bool>,
    back: Vec<V3>,
    reproj: Vec<[f64; 2]>,
}

fn check_batch(y2: &Array2<f64>, offsets: &Array2<f64>, elevation: &Array1<f64>, azimuth: &Array1<f64>) -> Result<usize> {
    let b = y2.nrows();
    let j = offsets.ncols();
    ensure_len("cycle pose width", 2 * j, y2.ncols())?;
    ensure_len("cycle offsets rows", b, offsets.nrows())?;
    ensure_len("cycle elevations", b, elevation.len())?;
    ensure_len("cycle azimuths", b, azimuth.len())?;
    if j < 2 {
        return Err(Error::Topology("cycle needs at least one non-root joint".into()));
    }
    for row in y2.outer_iter() {
        if row[0] != 0.0 || row[1] != 0.0 {
            return Err(Error::Data("cycle inputs must be root-centered".into()));
        }
    }
    Ok(j)
}

fn stage_one(y2: &Array2<f64>, offsets: &Array2<f64>, elevation: &Array1<f64>, azimuth: &Array1<f64>, c: f64) -> Result<StageOne> {
    let joints = check_batch(y2, offsets, elevation, azimuth)?;
    let batch = y2.nrows();
    let r = V3::new(0.0, 0.0, c);
    let mut p = Vec::with_capacity(batch * joints);
    let mut active = Vec::with_capacity(batch * joints);
    let mut q = Vec::with_capacity(batch * joints);
    let mut rot = Vec::with_capacity(batch);
    let mut d_rot = Vec::with_capacity(batch);
    let mut virtual_2d = Array2::zeros((batch, 2 * joints));
    for b in 0..batch {
        let params = RotationParams::new(azimuth[b], elevation[b]);
        let m = params.matrix();
        for j in 0..joints {
            let t = offsets[(b, j)] + c;
            let z = clamp_depth(t);
            let pj = V3::new(y2[(b, 2 * j)] * z, y2[(b, 2 * j + 1)] * z, z);
            let qj = m * (pj - r) + r;
            let w = clamp_depth(qj.z);
            virtual_2d[(b, 2 * j)] = qj.x / w;
            virtual_2d[(b, 2 * j + 1)] = qj.y / w;
            p.push(pj);
            active.push(t > MIN_DEPTH);
            q.push(qj);
        }
        rot.push(m);
        d_rot.push(params.d_matrix_d_elevation());
    }
    Ok(StageOne {
        batch,
        joints,
        c,
        p,
        active,
        rot,
        d_rot,
        q,
        virtual_2d,
    })
}

fn stage_two(one: &StageOne, offsets2: &Array2<f64>) -> Result<StageTwo> {
    ensure_len("re-lift offsets rows", one.batch, offsets2.nrows())?;
    ensure_len("re-lift offsets width", one.joints, offsets2.ncols())?;
    let r = V3::new(0.0, 0.0, one.c);
    let n = one.batch * one.joints;
    let (mut t, mut active, mut back, mut reproj) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for b in 0..one.batch {
        let rt = one.rot[b].transpose();
        for j in 0..one.joints {
            let s = offsets2[(b, j)] + one.c;
            let z = clamp_depth(s);
            let tj = V3::new(one.virtual_2d[(b, 2 * j)] * z, one.virtual_2d[(b, 2 * j + 1)] * z, z);
            let bj = rt * (tj - r) + r;
            let w = clamp_depth(bj.z);
            t.push(tj);
            active.push(s > MIN_DEPTH);
            back.push(bj);
            reproj.push([bj.x / w, bj.y / w]);
        }
    }
    Ok(StageTwo { t, active, back, reproj })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute 2D reprojection and 3D consistency errors over non-root
/// joints; adds `weight`-scaled gradients into `g_reproj`, `g_p`, `g_back`.
fn consistency_terms(
    y2: &Array2<f64>,
    one: &StageOne,
    two: &StageTwo,
    weight: f64,
    grads: Option<(&mut [[f64; 2]], &mut [V3], &mut [V3])>,
) -> (f64, f64) {
    let (batch, joints) = (one.batch, one.joints);
    let n2 = (batch * (joints - 1) * 2) as f64;
    let n3 = (batch * (joints - 1) * 3) as f64;
    let (mut l2, mut l3) = (0.0, 0.0);
    let mut grads = grads;
    for b in 0..batch {
        for j in 1..joints {
            let i = b * joints + j;
            let d2 = [two.reproj[i][0] - y2[(b, 2 * j)], two.reproj[i][1] - y2[(b, 2 * j + 1)]];
            let d3 = one.p[i] - two.back[i];
            l2 += d2[0].abs() + d2[1].abs();
            l3 += d3.x.abs() + d3.y.abs() + d3.z.abs();
            if let Some((gr, gp, gb)) = grads.as_mut() {
                gr[i][0] += weight * sign(d2[0]) / n2;
                gr[i][1] += weight * sign(d2[1]) / n2;
                let s = V3::new(sign(d3.x), sign(d3.y), sign(d3.z)) * (weight / n3);
                gp[i] += s;
                gb[i] -= s;
            }
        }
    }
    (l2 / n2, l3 / n3)
}

/// `‖(Pᵃ − Pᵇ) − (Bᵃ − Bᵇ)‖²` averaged over adjacent pairs `(2k, 2k + 1)`.
fn deformation_terms(
    p: &[V3],
    back: &[V3],
    batch: usize,
    joints: usize,
    weight: f64,
    grads: Option<(&mut [V3], &mut [V3])>,
) -> f64 {
    let pairs = batch / 2;
    if pairs == 0 {
        return 0.0;
    }
    let mut grads = grads;
    let mut total = 0.0;
    for k in 0..pairs {
        let (a, b) = (2 * k * joints, (2 * k + 1) * joints);
        for j in 0..joints {
            let d = (p[a + j] - p[b + j]) - (back[a + j] - back[b + j]);
            total += d.norm_squared();
            if let Some((gp, gb)) = grads.as_mut() {
                let g = d * (2.0 * weight / pairs as f64);
                gp[a + j] += g;
                gp[b + j] -= g;
                gb[a + j] -= g;
                gb[b + j] += g;
            }
        }
    }
    total / pairs as f64
}

/// Mean over the batch of `(1/K) Σ (ℓᵢ − mᵢ)²` with `ℓ` the relative bone
/// lengths of each pose.
fn bone_terms(
    p: &[V3],
    batch: usize,
    joints: usize,
    topology: &SkeletonTopology,
    means: &[f64],
    weight: f64,
    grads: Option<&mut [V3]>,
) -> Result<f64> {
    let bones = topology.bones();
    let k = bones.len() as f64;
    ensure_len("mean bone lengths", bones.len(), means.len())?;
    let mut grads = grads;
    let mut total = 0.0;
    for b in 0..batch {
        let base = b * joints;
        let vecs: Vec<V3> = bones.iter().map(|&(pa, ch)| p[base + ch] - p[base + pa]).collect();
        let lens: Vec<f64> = vecs.iter().map(|v| v.norm()).collect();
        let sum: f64 = lens.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegeneratePose("skeleton has zero total bone length".into()));
        }
        let rel: Vec<f64> = lens.iter().map(|l| l / sum).collect();
        total += rel.iter().zip(means).map(|(r, m)| (r - m).powi(2)).sum::<f64>() / k;
        if let Some(gp) = grads.as_mut() {
            let scale = weight / batch as f64;
            let g_rel: Vec<f64> = rel.iter().zip(means).map(|(r, m)| 2.0 * (r - m) / k).collect();
            let dot: f64 = g_rel.iter().zip(&rel).map(|(g, r)| g * r).sum();
            for (i, &(pa, ch)) in bones.iter().enumerate() {
                if lens[i] == 0.0 {
                    continue;
                }
                let g_len = (g_rel[i] - dot) / sum;
                let g = vecs[i] * (scale * g_len / lens[i]);
                gp[base + ch] += g;
                gp[base + pa] -= g;
            }
        }
    }
    Ok(total / batch.max(1) as f64)
}

fn to_v3(p: &Pose3D) -> Vec<V3> {
    p.coords.iter().map(|c| V3::new(c[0], c[1], c[2])).collect()
}

fn to_pose(v: &[V3]) -> Pose3D {
    Pose3D::new(v.iter().map(|p| [p.x, p.y, p.z]).collect())
}

/// Relative bone-length loss of one pose against mean relative lengths.
pub fn bone_loss(candidate: &Pose3D, mean_lengths: &[f64], topology: &SkeletonTopology) -> Result<f64> {
    ensure_len("pose joints", topology.num_joints(), candidate.len())?;
    bone_terms(&to_v3(candidate), 1, candidate.len(), topology, mean_lengths, 1.0, None)
}

/// Deformation loss between a batch of lifted poses and their
/// re-lifted, back-rotated counterparts, paired at adjacent positions.
pub fn deformation_loss(lifted: &[Pose3D], returned: &[Pose3D]) -> Result<f64> {
    ensure_len("deformation batch", lifted.len(), returned.len())?;
    let Some(first) = lifted.first() else {
        return Ok(0.0);
    };
    let joints = first.len();
    let mut p = Vec::new();
    let mut b = Vec::new();
    for (x, y) in lifted.iter().zip(returned) {
        ensure_len("deformation pose joints", joints, x.len())?;
        ensure_len("deformation pose joints", joints, y.len())?;
        p.extend(to_v3(x));
        b.extend(to_v3(y));
    }
    Ok(deformation_terms(&p, &b, lifted.len(), joints, 1.0, None))
}

/// Intermediate poses of a cycle driven by explicit depth offsets.
#[derive(Clone, Debug)]
pub struct CycleOutputs {
    /// `P`: the first lift.
    pub lifted: Vec<Pose3D>,
    /// `ỹ`: projection of the rotated lift.
    pub virtual_2d: Array2<f64>,
    /// `B`: the re-lift rotated back.
    pub returned: Vec<Pose3D>,
    /// `p`: projection of `B`.
    pub reprojected: Vec<Pose2D>,
    pub l_2d: f64,
    pub l_3d: f64,
}

/// Runs the cycle with given depth offsets for the first lift and a
/// callback supplying the offsets of the re-lift from the virtual 2D poses.
/// Batches are rows of `2 J` coordinates, root-centered.
pub fn cycle_from_depths<F>(
    y2: &Array2<f64>,
    offsets: &Array2<f64>,
    elevation: &Array1<f64>,
    azimuth: &Array1<f64>,
    c: f64,
    relift: F,
) -> Result<CycleOutputs>
where
    F: FnOnce(&Array2<f64>) -> Result<Array2<f64>>,
{
    let one = stage_one(y2, offsets, elevation, azimuth, c)?;
    let offsets2 = relift(&one.virtual_2d)?;
    let two = stage_two(&one, &offsets2)?;
    let (l_2d, l_3d) = consistency_terms(y2, &one, &two, 1.0, None);
    let j = one.joints;
    Ok(CycleOutputs {
        lifted: one.p.chunks(j).map(to_pose).collect(),
        returned: two.back.chunks(j).map(to_pose).collect(),
        reprojected: two.reproj.chunks(j).map(|r| Pose2D::new(r.to_vec())).collect(),
        virtual_2d: one.virtual_2d,
        l_2d,
        l_3d,
    })
}

/// Value of the full objective for one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    /// `Σ_c w_c · total_c` over candidates with nonzero weight.
    pub total: f64,
    pub per_candidate: Vec<(Candidate, LossBreakdown)>,
    /// (sample, flow) pairs left out of the flow term for a non-finite NLL.
    pub skipped_nf: usize,
}

struct Context<'a> {
    lifters: &'a LifterSet,
    flows: &'a FlowSet,
    topology: &'a SkeletonTopology,
    means: &'a [f64],
    c: f64,
    y2: &'a Array2<f64>,
    azimuth: &'a Array1<f64>,
}

type OutGrads = [Option<Array2<f64>>; 4];

/// Mean segment-flow NLL of the virtual poses and its gradient.
fn flow_terms(ctx: &Context<'_>, virtual_2d: &Array2<f64>, weight: f64, grad: Option<&mut Array2<f64>>) -> Result<(f64, usize)> {
    let batch = virtual_2d.nrows();
    let mut grad = grad;
    let mut total = 0.0;
    let mut skipped = 0;
    for seg in Segment::ALL {
        let flow = ctx.flows.segment(seg);
        let cols = SkeletonTopology::flat_columns(ctx.topology.segment(seg));
        ensure_len("segment flow dimension", cols.len(), flow.dim)?;
        let x = virtual_2d.select(Axis(1), &cols);
        let ones = Array1::ones(batch);
        let (nll, mut dx) = flow.nll_with_grad(&x, &ones, None)?;
        let valid: Vec<bool> = nll.iter().zip(x.outer_iter()).map(|(v, row)| v.is_finite() && row.iter().all(|x| x.is_finite())).collect();
        let count = valid.iter().filter(|&&v| v).count();
        skipped += batch - count;
        if count == 0 {
            continue;
        }
        let mean: f64 = nll.iter().zip(&valid).filter(|(_, &v)| v).map(|(n, _)| n).sum::<f64>() / count as f64;
        total += mean / 4.0;
        if let Some(g) = grad.as_mut() {
            for (b, mut row) in dx.outer_iter_mut().enumerate() {
                if valid[b] {
                    row *= weight / (4.0 * count as f64);
                } else {
                    row.fill(0.0);
                }
            }
            for (k, &col) in cols.iter().enumerate() {
                let mut dst = g.column_mut(col);
                dst += &dx.column(k);
            }
        }
    }
    Ok((total, skipped))
}

/// Forward (and optionally backward) pass of one candidate. `lift1` holds
/// the first-pass outputs of every lifter; gradients with respect to them
/// are accumulated into `lift1_grads`, re-lift parameter gradients into
/// `param_grads`.
fn candidate_pass(
    ctx: &Context<'_>,
    lift1: &OutGrads,
    plan: &Plan,
    weight: f64,
    mut grads: Option<(&mut LifterSet, &mut OutGrads)>,
) -> Result<(LossBreakdown, usize)> {
    let joints = ctx.topology.num_joints();
    let (offsets1, elevation1) = assemble_batch(lift1, ctx.lifters, plan, joints)?;
    let one = stage_one(ctx.y2, &offsets1, &elevation1, ctx.azimuth, ctx.c)?;

    let mut outputs2: OutGrads = Default::default();
    let mut tapes2 = Vec::new();
    for (seg, _) in &plan.parts {
        let lifter = ctx.lifters.get(*seg);
        let x = one.virtual_2d.select(Axis(1), &SkeletonTopology::flat_columns(&lifter.joints));
        let (y, tape) = lifter.forward(&x)?;
        outputs2[seg.index()] = Some(y);
        tapes2.push((*seg, tape));
    }
    let (offsets2, _) = assemble_batch(&outputs2, ctx.lifters, plan, joints)?;
    let two = stage_two(&one, &offsets2)?;

    let n = one.batch * joints;
    let want = grads.is_some();
    let mut g_reproj = vec![[0.0; 2]; if want { n } else { 0 }];
    let mut g_p = vec![V3::zeros(); if want { n } else { 0 }];
    let mut g_back = vec![V3::zeros(); if want { n } else { 0 }];
    let mut g_virtual = Array2::zeros(if want { (one.batch, 2 * joints) } else { (0, 0) });

    let (l_2d, l_3d) = consistency_terms(
        ctx.y2,
        &one,
        &two,
        weight,
        want.then_some((&mut g_reproj[..], &mut g_p[..], &mut g_back[..])),
    );
    let l_def = deformation_terms(
        &one.p,
        &two.back,
        one.batch,
        joints,
        weight,
        want.then_some((&mut g_p[..], &mut g_back[..])),
    );
    let l_b = bone_terms(
        &one.p,
        one.batch,
        joints,
        ctx.topology,
        ctx.means,
        weight * BONE_WEIGHT,
        want.then_some(&mut g_p[..]),
    )?;
    let (l_nf, skipped) = flow_terms(ctx, &one.virtual_2d, weight, want.then_some(&mut g_virtual))?;
    let breakdown = LossBreakdown {
        l_nf,
        l_2d,
        l_3d,
        l_def,
        l_b,
    };

    let Some((param_grads, lift1_grads)) = grads.as_mut() else {
        return Ok((breakdown, skipped));
    };
    let r = V3::new(0.0, 0.0, ctx.c);

    // p = proj(B), B = Rᵀ (T − r) + r, T = lift(ỹ, d')
    let mut g_offsets2 = Array2::zeros((one.batch, joints));
    let mut g_rot = vec![Matrix3::zeros(); one.batch];
    for b in 0..one.batch {
        let m = &one.rot[b];
        for j in 0..joints {
            let i = b * joints + j;
            let bj = two.back[i];
            let w = clamp_depth(bj.z);
            let gr = g_reproj[i];
            let mut gb = g_back[i];
            gb.x += gr[0] / w;
            gb.y += gr[1] / w;
            if bj.z > MIN_DEPTH {
                gb.z -= (gr[0] * bj.x + gr[1] * bj.y) / (w * w);
            }
            let gt = m * gb;
            g_rot[b] += (two.t[i] - r) * gb.transpose();
            let z = clamp_depth(two.t[i].z);
            let (u, v) = (one.virtual_2d[(b, 2 * j)], one.virtual_2d[(b, 2 * j + 1)]);
            g_virtual[(b, 2 * j)] += gt.x * z;
            g_virtual[(b, 2 * j + 1)] += gt.y * z;
            if two.active[i] {
                g_offsets2[(b, j)] = gt.x * u + gt.y * v + gt.z;
            }
        }
    }

    let mut relift_grads: OutGrads = Default::default();
    assemble_backward(&g_offsets2, &Array1::zeros(one.batch), ctx.lifters, plan, &mut relift_grads);
    for (seg, tape) in &tapes2 {
        let lifter = ctx.lifters.get(*seg);
        let dy = relift_grads[seg.index()].take().expect("assemble_backward covers every plan lifter");
        let dx = lifter.backward(tape, &dy, Some(&mut param_grads.lifters[seg.index()]))?;
        for (k, &col) in SkeletonTopology::flat_columns(&lifter.joints).iter().enumerate() {
            let mut dst = g_virtual.column_mut(col);
            dst += &dx.column(k);
        }
    }

    // ỹ = proj(Q), Q = R (P − r) + r, P = lift(y, d)
    let mut g_offsets1 = Array2::zeros((one.batch, joints));
    let mut g_elevation = Array1::zeros(one.batch);
    for b in 0..one.batch {
        let m = &one.rot[b];
        for j in 0..joints {
            let i = b * joints + j;
            let qj = one.q[i];
            let w = clamp_depth(qj.z);
            let (gu, gv) = (g_virtual[(b, 2 * j)], g_virtual[(b, 2 * j + 1)]);
            let mut gq = V3::new(gu / w, gv / w, 0.0);
            if qj.z > MIN_DEPTH {
                gq.z = -(gu * qj.x + gv * qj.y) / (w * w);
            }
            let gp = g_p[i] + m.transpose() * gq;
            g_rot[b] += gq * (one.p[i] - r).transpose();
            if one.active[i] {
                g_offsets1[(b, j)] = gp.x * ctx.y2[(b, 2 * j)] + gp.y * ctx.y2[(b, 2 * j + 1)] + gp.z;
            }
        }
        g_elevation[b] = g_rot[b].component_mul(&one.d_rot[b]).sum();
    }
    assemble_backward(&g_offsets1, &g_elevation, ctx.lifters, plan, lift1_grads);
    Ok((breakdown, skipped))
}

/// Evaluates `Σ_c w_c (L_NF + L_2D + L_3D + L_def + 50 L_b)` on a batch of
/// root-centered 2D poses (rows of `2 J` values) with one azimuth per row,
/// and optionally the gradient with respect to every lifter parameter.
#[allow(clippy::too_many_arguments)]
pub fn objective_and_gradients(
    lifters: &LifterSet,
    flows: &FlowSet,
    batch: &Array2<f64>,
    azimuth: &Array1<f64>,
    bone_means: &[f64],
    topology: &SkeletonTopology,
    candidate_weights: &[f64; 3],
    c: f64,
    want_grads: bool,
) -> Result<(Objective, Option<LifterSet>)> {
    let ctx = Context {
        lifters,
        flows,
        topology,
        means: bone_means,
        c,
        y2: batch,
        azimuth,
    };
    let active: Vec<Candidate> = Candidate::ALL.into_iter().filter(|c| candidate_weights[c.index()] != 0.0).collect();
    let mut lift1: OutGrads = Default::default();
    let mut tapes1: Vec<(Segment, super::LifterTape)> = Vec::new();
    for cand in &active {
        for (seg, _) in cand.plan(topology).parts {
            if lift1[seg.index()].is_none() {
                let lifter = lifters.get(seg);
                let x = batch.select(Axis(1), &SkeletonTopology::flat_columns(&lifter.joints));
                let (y, tape) = lifter.forward(&x)?;
                lift1[seg.index()] = Some(y);
                tapes1.push((seg, tape));
            }
        }
    }
    let mut param_grads = want_grads.then(|| lifters.zeros_like());
    let mut lift1_grads: OutGrads = Default::default();
    let mut per_candidate = Vec::with_capacity(active.len());
    let mut total = 0.0;
    let mut skipped = 0;
    for cand in active {
        let w = candidate_weights[cand.index()];
        let plan = cand.plan(topology);
        let g = param_grads.as_mut().map(|p| (p, &mut lift1_grads));
        let (br, sk) = candidate_pass(&ctx, &lift1, &plan, w, g)?;
        total += w * br.total();
        skipped += sk;
        per_candidate.push((cand, br));
    }
    if let Some(pg) = param_grads.as_mut() {
        for (seg, tape) in &tapes1 {
            if let Some(dy) = &lift1_grads[seg.index()] {
                lifters.get(*seg).backward(tape, dy, Some(&mut pg.lifters[seg.index()]))?;
            }
        }
    }
    Ok((
        Objective {
            total,
            per_candidate,
            skipped_nf: skipped,
        },
        param_grads,
    ))
}

/// Loss terms of one candidate on a batch of normalized poses, with
/// azimuths drawn uniformly from `[−π, π]`.
#[allow(clippy::too_many_arguments)]
pub fn consistency_cycle<R: Rng + ?Sized>(
    poses: &[Pose2D],
    lifters: &LifterSet,
    flows: &FlowSet,
    bone_means: &[f64],
    candidate: Candidate,
    topology: &SkeletonTopology,
    c: f64,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let batch = poses_to_batch(poses, topology.num_joints())?;
    let azimuth = Array1::from_shape_fn(poses.len(), |_| rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI));
    let mut weights = [0.0; 3];
    weights[candidate.index()] = 1.0;
    let (obj, _) = objective_and_gradients(lifters, flows, &batch, &azimuth, bone_means, topology, &weights, c, false)?;
    Ok(obj.per_candidate[0].1)
}

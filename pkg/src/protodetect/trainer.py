"""Two-stage episodic training loop with hand-rolled AdamW.

Stage 1 optimizes the matching loss alone (lambda_kl = lambda_align = 0);
stage 2 activates the KL and alignment terms. Each step rebuilds the
prototypes through the current net, assembles an episode (augmented
queries from the support set plus background queries from a scene),
evaluates the full objective, clips the gradient, and applies one
AdamW update. The loop is single-threaded and fully deterministic in
(config, dataset, seed).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .embedder import all_params, default_net_and_classifier
from .losses import LossConfig, episode_loss
from .numeric import make_rng
from .prototypes import (BACKGROUND_ID, PrototypeBank, SupportSet,
                         background_pool, build_prototypes)
from .simulator import IGNORE, augment_feature, label_proposals

FULL_SPLIT = "full"
PARTIAL_SPLIT = "partial"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    stage1_steps: int = 500
    stage2_steps: int = 200
    shots: int = 5
    queries_per_support: int = 4
    tau: float = 10.0
    lambda_kl: float = 1.0
    lambda_align: float = 1.0
    seed: int = 0
    augment: bool = True
    augment_strength: float = 0.5
    support_query_split: str = FULL_SPLIT
    hidden_dim: int = 512
    emb_dim: int = 128
    mlp_depth: int = 2
    grad_clip: float = 10.0
    kl_stop_teacher: bool = False
    align_include_background: bool = True
    normalize_loss: bool = True

    def validate(self):
        if self.lr <= 0 or self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ValueError("invalid training config")
        if self.shots < 1 or self.queries_per_support < 1:
            raise ValueError("shots and queries_per_support must be >= 1")
        if self.support_query_split not in (FULL_SPLIT, PARTIAL_SPLIT):
            raise ValueError(f"unknown split mode {self.support_query_split!r}")

    def loss_config(self, stage):
        return LossConfig.for_stage(
            stage, self.lambda_kl, self.lambda_align, tau=self.tau,
            kl_stop_teacher=self.kl_stop_teacher,
            align_include_background=self.align_include_background,
            normalize=self.normalize_loss)


class AdamW:
    """Decoupled weight decay Adam; state shapes mirror the parameters."""

    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            # decay is decoupled from the adaptive update
            p -= c.lr * c.weight_decay * p
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def clip_global_norm(grads, max_norm):
    """Scale grads in place so their global norm is <= max_norm; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def make_episode(rng, support, cfg, sigma_f=1.0):
    """Support/query split for one step.

    full: prototypes from all support vectors, queries are m augmented
    copies of each. partial (requires 5 shots): 3/5 build prototypes,
    2/5 serve as queries (m augmented copies each when augmentation is
    on, otherwise used as-is).
    """
    strength = cfg.augment_strength if cfg.augment else 0.0
    feats, labels = [], []
    if cfg.support_query_split == FULL_SPLIT:
        proto_support = support
        for cid in support.class_ids:
            for v in support.by_class[cid]:
                for _ in range(cfg.queries_per_support):
                    feats.append(augment_feature(rng, v, strength, sigma_f))
                    labels.append(cid)
    else:
        if any(support.shots(c) != 5 for c in support.class_ids):
            raise ValueError("split requires 5 shots")
        proto_support = SupportSet(
            {c: support.by_class[c][:3] for c in support.class_ids})
        for cid in support.class_ids:
            for v in support.by_class[cid][3:]:
                if cfg.augment:
                    for _ in range(cfg.queries_per_support):
                        feats.append(augment_feature(rng, v, strength, sigma_f))
                        labels.append(cid)
                else:
                    feats.append(np.asarray(v, dtype=np.float64))
                    labels.append(cid)
    return proto_support, np.stack(feats), np.asarray(labels, dtype=np.int64)


def scene_background_features(scene, threshold=0.3):
    gts = [b for b, _ in scene.gt]
    return background_pool(scene.proposals, gts, threshold)


def nearest_prototype_accuracy(net, bank, features, labels):
    """Fraction of features whose nearest prototype matches their label."""
    if len(features) == 0:
        return float("nan")
    Q, _ = net.forward_batch(np.asarray(features, dtype=np.float64))
    d = ((Q[:, None, :] - bank.P[None, :, :]) ** 2).sum(axis=2)
    pred = np.asarray(bank.ids)[np.argmin(d, axis=1)]
    return float(np.mean(pred == np.asarray(labels)))


def heldout_accuracy(net, bank, scenes):
    """Nearest-prototype accuracy on labeled proposals from held-out scenes.

    Proposals in the IoU ignore band or labeled with classes outside
    the bank are skipped; background proposals count with label 0.
    """
    feats, labels = [], []
    for scene in scenes:
        for idx, y in label_proposals(scene):
            if y == IGNORE or not bank.has(y):
                continue
            feats.append(scene.proposals[idx][1])
            labels.append(y)
    return nearest_prototype_accuracy(net, bank, feats, labels)


@dataclass
class TrainResult:
    net: object
    clf: object
    bank: PrototypeBank
    log: list = field(default_factory=list)

    def write_log(self, path):
        with open(path, "w") as f:
            for rec in self.log:
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def train(world, cfg):
    """Run the two-stage schedule on a generated world.

    Returns the trained net/classifier, the final bank rebuilt from
    the original support set, and a JSON-serializable per-step log.
    """
    cfg.validate()
    support = SupportSet(world.support_seen)
    n_classes = len(support.class_ids)
    net, clf = default_net_and_classifier(
        cfg.seed, support.feature_dim, cfg.hidden_dim, cfg.emb_dim,
        n_classes, cfg.mlp_depth)
    rng = make_rng(cfg.seed + 1)
    opt = AdamW(all_params(net, clf), cfg)
    sigma_f = world.config.sigma_f

    log = []
    last_p0 = np.zeros(cfg.emb_dim)
    total = cfg.stage1_steps + cfg.stage2_steps
    for step in range(total):
        stage = 1 if step < cfg.stage1_steps else 2
        loss_cfg = cfg.loss_config(stage)

        scene = world.train_scenes[int(rng.integers(len(world.train_scenes)))]
        proto_support, qfeats, qlabels = make_episode(rng, support, cfg, sigma_f)
        bg = scene_background_features(scene)
        if bg:
            qfeats = np.concatenate([qfeats, np.asarray(bg)])
            qlabels = np.concatenate([qlabels, np.zeros(len(bg), dtype=np.int64)])
            kwargs = {"bg_features": bg}
        else:
            kwargs = {"frozen_p0": last_p0}
        try:
            bundle = episode_loss(net, clf, proto_support, qfeats, qlabels,
                                  loss_cfg, **kwargs)
        except ValueError as e:
            # overflow in the forward pass surfaces as non-finite logits
            if "non-finite" in str(e):
                raise FloatingPointError(f"diverged at step {step}") from e
            raise
        if bg:
            last_p0 = bundle.bank.get(BACKGROUND_ID)

        if not np.isfinite(bundle.l_total):
            raise FloatingPointError(f"diverged at step {step}")

        flat = bundle.grads.flat()
        grad_norm = clip_global_norm(flat, cfg.grad_clip)
        opt.step(all_params(net, clf), flat)

        log.append({"step": step, "stage": stage,
                    "l_match": bundle.l_match, "l_kl": bundle.l_kl,
                    "l_align": bundle.l_align, "l_total": bundle.l_total,
                    "grad_norm": grad_norm})

    bank, _ = build_prototypes(net, support)
    all_bg = [f for s in world.train_scenes for f in scene_background_features(s)]
    if all_bg:
        bg_emb, _ = net.forward_batch(np.asarray(all_bg))
        last_p0 = bg_emb.mean(axis=0)
    entries = list(zip(bank.ids, bank.P)) + [(BACKGROUND_ID, last_p0)]
    final_bank = PrototypeBank(entries)
    return TrainResult(net=net, clf=clf, bank=final_bank, log=log)

"""QMIX and independent Q-learning over numpy dense networks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..nnet import (DenseNet, RMSProp, TrainingDivergence, backward, clip_grads, elu,
                    elu_grad, forward, init_net, mlp)
from .replay import Batch


@dataclass(frozen=True)
class Hyper:
    gamma: float = 0.99
    lr: float = 5e-4
    hidden: int = 64
    mixer_embed: int = 32
    grad_clip: float = 10.0
    double_q: bool = True

    @classmethod
    def from_config(cls, cfg) -> "Hyper":
        return cls(cfg.gamma, cfg.lr, cfg.hidden, cfg.mixer_embed, cfg.grad_clip, cfg.double_q)


@dataclass
class Group:
    kind: str
    idx: list[int]
    obs_dim: int
    n_actions: int


def group_agents(agents: Sequence) -> list[Group]:
    groups: dict[str, Group] = {}
    for i, a in enumerate(agents):
        g = groups.get(a.kind)
        if g is None:
            groups[a.kind] = Group(a.kind, [i], a.obs_dim, a.action_count)
        else:
            if (a.obs_dim, a.action_count) != (g.obs_dim, g.n_actions):
                raise ValueError(f"agents of kind {a.kind} disagree on dimensions")
            g.idx.append(i)
    return list(groups.values())


def greedy(q: np.ndarray) -> int:
    """Argmax with ties going to the lowest index."""
    return int(np.argmax(q))


def select_actions(model, observations: Sequence[np.ndarray], epsilon: float,
                   rng: np.random.Generator, mask: Sequence[float] | None = None,
                   idle_action: int = 1) -> list[int]:
    """Per-agent epsilon-greedy on each agent's own Q-values.

    Agents with ``mask == 0`` (arrived engines) get ``idle_action``; the RNG is
    consumed identically either way so draws stay aligned across agents.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    qs = model.q_values(observations)
    actions = []
    for i, q in enumerate(qs):
        explore = rng.random() < epsilon
        rand = int(rng.integers(len(q)))
        if mask is not None and not mask[i]:
            actions.append(idle_action)
        else:
            actions.append(rand if explore else greedy(q))
    return actions


def _stack_group(group: Group, obs: Sequence[np.ndarray], with_ids: bool) -> np.ndarray:
    """Rows are (batch, agent) pairs in row-major order."""
    if obs[group.idx[0]].ndim == 1:
        X = np.array([obs[k] for k in group.idx])
        if with_ids:
            X = np.hstack([X, np.eye(len(group.idx))])
        return X
    X = np.stack([np.atleast_2d(obs[k]) for k in group.idx], axis=1)
    B, n, d = X.shape
    if with_ids:
        ids = np.broadcast_to(np.eye(n), (B, n, n))
        X = np.concatenate([X, ids], axis=2)
        d += n
    return X.reshape(B * n, d)


class QmixModel:
    """Shared per-kind agent networks (agent-id one-hot appended) and a
    state-conditioned monotonic mixer built from hypernetworks."""

    strategy = "qmix"

    def __init__(self, agents: Sequence, state_dim: int, hp: Hyper,
                 rng: np.random.Generator):
        self.agents = list(agents)
        self.n_agents = len(self.agents)
        self.state_dim = state_dim
        self.hp = hp
        self.groups = group_agents(self.agents)
        E = hp.mixer_embed
        n = self.n_agents
        self.agent_nets = {
            g.kind: mlp(g.obs_dim + len(g.idx), [hp.hidden, hp.hidden], g.n_actions, rng)
            for g in self.groups
        }
        self.hyper_w1 = init_net([state_dim, n * E], ["abs"], rng)
        self.hyper_b1 = init_net([state_dim, E], ["identity"], rng)
        self.hyper_w2 = init_net([state_dim, E], ["abs"], rng)
        self.hyper_b2 = init_net([state_dim, E, 1], ["relu", "identity"], rng)
        self.target = {k: net.clone() for k, net in self.nets().items()}
        self.optimizer = RMSProp(self.params(), hp.lr)
        self.train_steps = 0

    def nets(self) -> dict[str, DenseNet]:
        out = {f"agent/{k}": v for k, v in self.agent_nets.items()}
        out.update({"mixer/w1": self.hyper_w1, "mixer/b1": self.hyper_b1,
                    "mixer/w2": self.hyper_w2, "mixer/b2": self.hyper_b2})
        return out

    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets().values() for p in net.params()]

    def sync_target(self) -> None:
        for k, net in self.nets().items():
            self.target[k].load_from(net)

    def load_nets(self, nets: dict[str, DenseNet]) -> None:
        for k, net in self.nets().items():
            if k not in nets:
                raise ValueError(f"checkpoint is missing network {k!r}")
            net.load_from(nets[k])
        self.sync_target()

    # -- acting -----------------------------------------------------------------

    def q_values(self, observations: Sequence[np.ndarray]) -> list[np.ndarray]:
        out: list[np.ndarray | None] = [None] * self.n_agents
        for g in self.groups:
            y = self.agent_nets[g.kind](_stack_group(g, observations, True))
            for j, k in enumerate(g.idx):
                out[k] = y[j]
        return out

    # -- mixing -----------------------------------------------------------------

    def _mix(self, nets: dict[str, DenseNet], q: np.ndarray, s: np.ndarray):
        B, n = q.shape
        E = self.hp.mixer_embed
        w1, c_w1 = forward(nets["mixer/w1"], s)
        b1, c_b1 = forward(nets["mixer/b1"], s)
        w2, c_w2 = forward(nets["mixer/w2"], s)
        b2, c_b2 = forward(nets["mixer/b2"], s)
        W1 = w1.reshape(B, n, E)
        hpre = np.einsum("bn,bne->be", q, W1) + b1
        h = elu(hpre)
        qtot = np.sum(h * w2, axis=1) + b2[:, 0]
        return qtot, (q, W1, hpre, h, w2, c_w1, c_b1, c_w2, c_b2)

    def qmix_forward(self, q, state) -> float | np.ndarray:
        """Q_tot for chosen per-agent values ``q`` and global ``state`` (single or batched)."""
        q = np.asarray(q, dtype=np.float64)
        s = np.asarray(state, dtype=np.float64)
        single = q.ndim == 1
        q2, s2 = np.atleast_2d(q), np.atleast_2d(s)
        if q2.shape[1] != self.n_agents or s2.shape[1] != self.state_dim:
            raise ValueError("q or state has the wrong dimension for this mixer")
        qtot, _ = self._mix(self.nets(), q2, s2)
        return float(qtot[0]) if single else qtot

    def _mix_backward(self, cache, g: np.ndarray):
        """Returns hypernetwork gradients (in nets() order) and dL/dq."""
        q, W1, hpre, h, w2, c_w1, c_b1, c_w2, c_b2 = cache
        B = q.shape[0]
        dw2 = g[:, None] * h
        db2 = g[:, None]
        dhpre = g[:, None] * w2 * elu_grad(hpre)
        dW1 = q[:, :, None] * dhpre[:, None, :]
        dq = np.einsum("bne,be->bn", W1, dhpre)
        gw1, _ = backward(self.hyper_w1, c_w1, dW1.reshape(B, -1))
        gb1, _ = backward(self.hyper_b1, c_b1, dhpre)
        gw2, _ = backward(self.hyper_w2, c_w2, dw2)
        gb2, _ = backward(self.hyper_b2, c_b2, db2)
        return [gw1, gb1, gw2, gb2], dq

    # -- learning ---------------------------------------------------------------

    def _chosen(self, nets, obs, actions):
        """Per-group forward; returns chosen Q (B, n), full Q per agent and caches."""
        B = actions.shape[0]
        chosen = np.zeros((B, self.n_agents))
        full = [None] * self.n_agents
        caches = {}
        for g in self.groups:
            y, cache = forward(nets[f"agent/{g.kind}"], _stack_group(g, obs, True))
            Y = y.reshape(B, len(g.idx), g.n_actions)
            caches[g.kind] = (cache, Y.shape)
            for j, k in enumerate(g.idx):
                full[k] = Y[:, j, :]
                chosen[:, k] = Y[np.arange(B), j, actions[:, k]]
        return chosen, full, caches

    def td_target(self, batch: Batch) -> np.ndarray:
        B = batch.size
        _, tgt_full, _ = self._chosen(self.target, batch.next_obs,
                                      np.zeros_like(batch.actions))
        if self.hp.double_q:
            _, on_full, _ = self._chosen(self.nets(), batch.next_obs,
                                         np.zeros_like(batch.actions))
            pick = on_full
        else:
            pick = tgt_full
        next_q = np.zeros((B, self.n_agents))
        for k in range(self.n_agents):
            a = np.argmax(pick[k], axis=1)
            next_q[:, k] = tgt_full[k][np.arange(B), a]
        next_q *= batch.next_mask
        qtot_next, _ = self._mix(self.target, next_q, batch.next_state)
        return batch.reward + self.hp.gamma * (1.0 - batch.done) * qtot_next

    def td_loss(self, batch: Batch, with_grads: bool = True):
        """Mean squared TD error of Q_tot and, optionally, gradients in params() order."""
        B = batch.size
        y = self.td_target(batch)
        nets = self.nets()
        chosen, _, caches = self._chosen(nets, batch.obs, batch.actions)
        q = chosen * batch.mask
        qtot, mcache = self._mix(nets, q, batch.state)
        err = qtot - y
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise TrainingDivergence("non-finite QMIX loss")
        if not with_grads:
            return loss, None
        g = 2.0 * err / B
        mixer_grads, dq = self._mix_backward(mcache, g)
        dq = dq * batch.mask
        agent_grads = []
        for grp in self.groups:
            cache, shape = caches[grp.kind]
            dY = np.zeros(shape)
            for j, k in enumerate(grp.idx):
                dY[np.arange(B), j, batch.actions[:, k]] = dq[:, k]
            gr, _ = backward(self.agent_nets[grp.kind], cache, dY.reshape(-1, shape[2]))
            agent_grads.append(gr)
        grads = [a for gr in agent_grads + mixer_grads for a in gr.arrays()]
        return loss, grads

    def train_step(self, batch: Batch) -> float:
        loss, grads = self.td_loss(batch)
        clip_grads(grads, self.hp.grad_clip)
        self.optimizer.step(grads)
        for net in self.nets().values():
            net.version += 1
        self.train_steps += 1
        return loss


class IqlModel:
    """One independent Q-network per agent trained on the shared team reward."""

    strategy = "iql"

    def __init__(self, agents: Sequence, state_dim: int, hp: Hyper,
                 rng: np.random.Generator):
        self.agents = list(agents)
        self.n_agents = len(self.agents)
        self.state_dim = state_dim
        self.hp = hp
        self.agent_nets = [mlp(a.obs_dim, [hp.hidden, hp.hidden], a.action_count, rng)
                           for a in self.agents]
        self.target_nets = [n.clone() for n in self.agent_nets]
        self.optimizers = [RMSProp(n.params(), hp.lr) for n in self.agent_nets]
        self.train_steps = 0

    def nets(self) -> dict[str, DenseNet]:
        return {f"agent/{a.agent_id}": n for a, n in zip(self.agents, self.agent_nets)}

    def sync_target(self) -> None:
        for t, n in zip(self.target_nets, self.agent_nets):
            t.load_from(n)

    def load_nets(self, nets: dict[str, DenseNet]) -> None:
        for k, net in self.nets().items():
            if k not in nets:
                raise ValueError(f"checkpoint is missing network {k!r}")
            net.load_from(nets[k])
        self.sync_target()

    def q_values(self, observations: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [net(o) for net, o in zip(self.agent_nets, observations)]

    def td_loss(self, batch: Batch, k: int, with_grads: bool = True):
        B = batch.size
        rows = np.arange(B)
        net, tgt = self.agent_nets[k], self.target_nets[k]
        tq = tgt(batch.next_obs[k])
        if self.hp.double_q:
            a_next = np.argmax(net(batch.next_obs[k]), axis=1)
        else:
            a_next = np.argmax(tq, axis=1)
        y = batch.reward + self.hp.gamma * (1.0 - batch.done) * batch.next_mask[:, k] * tq[rows, a_next]
        Q, cache = forward(net, batch.obs[k])
        m = batch.mask[:, k]
        denom = max(float(m.sum()), 1.0)
        err = (Q[rows, batch.actions[:, k]] - y) * m
        loss = float(np.sum(err ** 2) / denom)
        if not np.isfinite(loss):
            raise TrainingDivergence(f"non-finite IQL loss for agent {k}")
        if not with_grads:
            return loss, None
        dQ = np.zeros_like(Q)
        dQ[rows, batch.actions[:, k]] = 2.0 * err / denom
        grads, _ = backward(net, cache, dQ)
        return loss, grads.arrays()

    def train_step(self, batch: Batch) -> list[float]:
        losses = []
        for k in range(self.n_agents):
            loss, grads = self.td_loss(batch, k)
            clip_grads(grads, self.hp.grad_clip)
            self.optimizers[k].step(grads)
            self.agent_nets[k].version += 1
            losses.append(loss)
        self.train_steps += 1
        return losses


def make_model(strategy: str, agents: Sequence, state_dim: int, hp: Hyper,
               rng: np.random.Generator):
    if strategy == "qmix":
        return QmixModel(agents, state_dim, hp, rng)
    if strategy == "iql":
        return IqlModel(agents, state_dim, hp, rng)
    raise ValueError(f"unknown strategy {strategy!r}")


def train_step_qmix(model: QmixModel, batch: Batch) -> tuple[QmixModel, float]:
    return model, model.train_step(batch)


def train_step_iql(model: IqlModel, batch: Batch) -> tuple[IqlModel, list[float]]:
    return model, model.train_step(batch)

"""The four contribution-evaluation protocols over simulated parties.

- ``run_nssv``: plaintext evaluation of every subset model; the ground
  truth the secure protocols are compared against.
- ``run_hesv``: one server, everything encrypted; squaring kernel with
  ciphertext-ciphertext multiplications; per-client batches only.
- ``run_secsv``: two servers; models encrypted, test data additively
  shared, so every multiplication is ciphertext-plaintext and samples
  from different clients share a batch.  Optional sample skipping.
- ``run_secretsv``: two servers, models and data both secret-shared;
  layers run on Beaver triples, which trades ciphertext arithmetic for
  dealer traffic and per-layer truncation error.

Linear layers are evaluated wherever the protocol dictates; activation
functions and label extraction always happen at an assigned client on
decrypted (or reconstructed) values, with the assignment rules of
``parties`` enforced throughout.

Rounds are independent: each runs with its own meter, router, and
noise stream seeded by the round index, so a worker pool of any size
produces byte-identical reports.  Per-round meters merge at the
barrier in round order.
"""

from __future__ import annotations

import math
import random as _random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .federation import ClientDataset, RoundModels
from .hebackend import (
    CipherVector,
    CostMeter,
    CostWeights,
    HEContext,
    HEParams,
    generate_keypair,
)
from .kernels import (
    _reducing_model_views,
    plan_reducing,
    plan_squaring,
    reducing_matmul,
    reducing_prepare_batch,
    reducing_prepare_model,
    squaring_decrypt,
    squaring_matmul,
    squaring_prepare_batch,
    squaring_prepare_model,
)
from .matrix import LabelVector, Matrix, argmax_columns, quantize
from .models import ACTIVATIONS, Model, forward, with_ones_row
from .parties import (
    SERVER_A,
    SERVER_P,
    Party,
    Router,
    assign_decryptors,
    client_name,
)
from .report import ContributionReport, RoundReport
from .sharing import (
    FieldParams,
    SharePair,
    TripleSupply,
    _truncate_shares,
    encode,
    encode_matrix,
    share_matmul,
    split_matrix,
)
from .shapley import (
    UtilityTable,
    fsv_aggregate,
    sample_skip_round,
    ssv_exact,
    subsets_ascending,
)

__all__ = [
    "ProtocolError",
    "run_nssv",
    "run_hesv",
    "run_secsv",
    "run_secretsv",
]

TOLERANCE = 0.5


class ProtocolError(RuntimeError):
    pass


# -- shared plumbing ---------------------------------------------------------


def _common_architecture(rounds: list[RoundModels]):
    arch = rounds[0].global_model.layers
    for record in rounds:
        for model in [record.global_model, *record.local_models.values()]:
            if model.layers != arch:
                raise ProtocolError("all rounds must share one architecture")
    return arch


def _activation(arch, layer_index: int, grid_bits):
    fn = ACTIVATIONS[arch[layer_index].activation]

    def apply(z: np.ndarray) -> np.ndarray:
        out = fn(z)
        return quantize(out, grid_bits) if grid_bits is not None else out

    return apply


@dataclass(frozen=True)
class _Batch:
    columns: tuple[int, ...]  # positions into the collective column order
    ids: tuple[int, ...]
    owners: frozenset


def _pooled_batches(owner_by_pos, ids_by_pos, positions, capacity, n_clients,
                    min_excluded: int = 2) -> list[_Batch]:
    """Greedy batches over the given column positions.

    A batch never grows past the slot capacity, and its owner set always
    leaves at least ``min_excluded`` clients outside so a label client
    can be assigned.
    """
    max_owners = max(1, n_clients - min_excluded)
    batches: list[_Batch] = []
    cols: list[int] = []
    owners: set = set()
    for pos in positions:
        owner = owner_by_pos[pos]
        if cols and (
            len(cols) >= capacity
            or (owner not in owners and len(owners) >= max_owners)
        ):
            batches.append(_Batch(tuple(cols), tuple(ids_by_pos[c] for c in cols),
                                  frozenset(owners)))
            cols, owners = [], set()
        cols.append(pos)
        owners.add(owner)
    if cols:
        batches.append(_Batch(tuple(cols), tuple(ids_by_pos[c] for c in cols),
                              frozenset(owners)))
    return batches


def _new_router(meter: CostMeter, he_params: HEParams, field, clients,
                two_servers: bool, with_dealer: bool = False) -> Router:
    router = Router(meter, he_params, field)
    router.register(Party(SERVER_P, "server"))
    if two_servers:
        router.register(Party(SERVER_A, "server"))
    if with_dealer:
        router.register(Party("dealer", "server"))
    for i in clients:
        router.register(Party(client_name(i), "client"))
    return router


def _run_rounds(round_fn, rounds, workers: int):
    if workers <= 1:
        return [round_fn(rec) for rec in rounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(round_fn, rounds))


def _finish_report(protocol, clients, total, round_results, base_meter, weights,
                   started) -> ContributionReport:
    """Merge per-round results (report, meter, decrypt actors) in round order."""
    per_round = []
    actors: list[str] = []
    for report, meter, round_actors in round_results:
        per_round.append(report)
        base_meter.merge(meter)
        actors.extend(round_actors)
    fsv = fsv_aggregate([r.ssv for r in per_round])
    for i in clients:
        fsv.setdefault(i, 0.0)
    return ContributionReport(
        protocol=protocol,
        clients=tuple(clients),
        total_samples=total,
        rounds=per_round,
        fsv=fsv,
        meter=base_meter,
        cost_weights=weights,
        decrypt_actors=tuple(actors),
        wall_seconds=time.perf_counter() - started,
    )


def _round_report(record: RoundModels, utilities, skip_result=None) -> RoundReport:
    table = UtilityTable(record.round_index, frozenset(record.selected))
    for subset, v in utilities.items():
        table.set(subset, v)
    ssv = ssv_exact(table)
    if skip_result is None:
        return RoundReport(record.round_index, tuple(record.selected), dict(utilities), ssv)
    skipped_by_card: dict[int, int] = {}
    evaluated_by_card: dict[int, int] = {}
    for subset, cnt in skip_result.skipped.items():
        skipped_by_card[len(subset)] = skipped_by_card.get(len(subset), 0) + cnt
    for subset, cnt in skip_result.evaluated.items():
        evaluated_by_card[len(subset)] = evaluated_by_card.get(len(subset), 0) + cnt
    return RoundReport(
        record.round_index,
        tuple(record.selected),
        dict(utilities),
        ssv,
        skipped=sum(skip_result.skipped.values()),
        evaluated=sum(skip_result.evaluated.values()),
        skipped_by_cardinality=skipped_by_card,
        evaluated_by_cardinality=evaluated_by_card,
    )


def _round_seed(base: int, round_index: int) -> int:
    return (base * 1_000_003 + round_index * 7919) % 2**31


# -- NSSV ---------------------------------------------------------------------


def run_nssv(
    rounds: list[RoundModels],
    test_sets: list[ClientDataset],
    cost_weights: CostWeights | None = None,
    seed: int = 0,
    workers: int = 1,
) -> ContributionReport:
    """Plaintext ground truth: every subset model tested on everything."""
    started = time.perf_counter()
    _common_architecture(rounds)
    weights = cost_weights or CostWeights()
    clients = list(range(len(test_sets)))
    total = sum(ds.size for ds in test_sets)

    setup_meter = CostMeter()
    router = _new_router(setup_meter, HEParams(), None, clients, two_servers=False)
    for i, ds in enumerate(test_sets):
        router.send(client_name(i), SERVER_P, [ds.features, ds.labels])

    def eval_round(record: RoundModels):
        meter = CostMeter()
        round_router = _new_router(meter, HEParams(), None, clients, two_servers=False)
        for i in record.selected:
            round_router.send(client_name(i), SERVER_P, list(record.local_models[i].params))
        utilities = {}
        for subset in subsets_ascending(record.selected):
            model = record.aggregated(subset)
            correct = 0
            for ds in test_sets:
                pred = argmax_columns(forward(model, ds.features))
                correct += int(np.sum(np.abs(pred.labels - ds.labels.labels) < TOLERANCE))
            utilities[subset] = correct / total
        return _round_report(record, utilities), meter, []

    results = _run_rounds(eval_round, rounds, workers)
    return _finish_report("nssv", clients, total, results, setup_meter, weights, started)


# -- HESV ----------------------------------------------------------------------


def run_hesv(
    rounds: list[RoundModels],
    test_sets: list[ClientDataset],
    he_params: HEParams | None = None,
    cost_weights: CostWeights | None = None,
    level: str = "basic",
    seed: int = 0,
    workers: int = 1,
) -> ContributionReport:
    """One-server protocol: encrypted models times encrypted batches."""
    started = time.perf_counter()
    arch = _common_architecture(rounds)
    he_params = he_params or HEParams()
    weights = cost_weights or CostWeights()
    n = len(test_sets)
    clients = list(range(n))
    num_layers = len(arch)
    grid_bits = rounds[0].global_model.act_grid_bits
    total = sum(ds.size for ds in test_sets)

    setup_meter = CostMeter()
    setup_ctx = HEContext(replace(he_params, seed=_round_seed(seed, 0)), setup_meter)
    router = _new_router(setup_meter, he_params, None, clients, two_servers=False)

    leader = int(np.random.default_rng(seed).integers(n))
    keys = generate_keypair(f"hesv-{seed}")
    for i in clients:
        if i != leader:
            router.send(client_name(leader), client_name(i), [keys.public, keys.private])
    router.send(client_name(leader), SERVER_P, keys.public)

    slot_count = he_params.slot_count
    m_cap = min(min(spec.in_size + 1 for spec in arch), math.isqrt(slot_count))
    plans: dict = {}

    def plan_for(layer: int, m: int):
        key = (layer, m)
        if key not in plans:
            spec = arch[layer]
            plans[key] = plan_squaring(spec.out_size, spec.in_size + 1, m, slot_count)
        return plans[key]

    batch_ranges = {
        i: [(s, min(s + m_cap, ds.size)) for s in range(0, ds.size, m_cap)]
        for i, ds in enumerate(test_sets)
    }

    # test data uploaded once: transformed-and-encrypted first-layer
    # inputs plus per-batch label ciphertexts
    data_cts: dict = {}
    label_cts: dict = {}
    for i, ds in enumerate(test_sets):
        for b, (lo, hi) in enumerate(batch_ranges[i]):
            x = with_ones_row(Matrix(ds.features.data[:, lo:hi]))
            sides = squaring_prepare_batch(
                x, plan_for(0, hi - lo), setup_ctx, keys.public, encrypt=True
            )
            router.send(client_name(i), SERVER_P, [ct for block in sides for ct in block])
            data_cts[(i, b)] = sides
            y_ct = setup_ctx.encrypt_slots(ds.labels.labels[lo:hi].astype(float), keys.public)
            router.send(client_name(i), SERVER_P, y_ct)
            label_cts[(i, b)] = y_ct

    def eval_round(record: RoundModels):
        meter = CostMeter()
        ctx = HEContext(replace(he_params, seed=_round_seed(seed, record.round_index)), meter)
        round_router = _new_router(meter, he_params, None, clients, two_servers=False)
        actors: list[str] = []
        players = sorted(record.selected)

        model_cts: dict = {}
        for i in players:
            layer_cts = []
            for l in range(num_layers):
                cts = squaring_prepare_model(
                    record.local_models[i].params[l], plan_for(l, m_cap), ctx, keys.public
                )
                round_router.send(client_name(i), SERVER_P,
                                  [ct for j in cts for k in j for ct in k])
                layer_cts.append(cts)
            model_cts[i] = layer_cts
        global_cts = []
        for l in range(num_layers):
            cts = squaring_prepare_model(
                record.global_model.params[l], plan_for(l, m_cap), ctx, keys.public
            )
            round_router.send(client_name(leader), SERVER_P,
                              [ct for j in cts for k in j for ct in k])
            global_cts.append(cts)

        def aggregated_cts(subset):
            if not subset:
                return global_cts
            w = record.weights_for(subset)
            members = sorted(subset)
            out = []
            for l in range(num_layers):
                shape = model_cts[members[0]][l]
                agg_layer = []
                for j in range(len(shape)):
                    agg_j = []
                    for k in range(len(shape[j])):
                        agg_o = []
                        for o in range(len(shape[j][k])):
                            acc = None
                            for i in members:
                                term = ctx.he_mult(model_cts[i][l][j][k][o], w[i])
                                acc = term if acc is None else ctx.he_add(acc, term)
                            agg_o.append(acc)
                        agg_j.append(agg_o)
                    agg_layer.append(agg_j)
                out.append(agg_layer)
            return out

        assignment_offset = 0
        utilities = {}
        for subset in subsets_ascending(players):
            agg = aggregated_cts(subset)
            owner = next(iter(subset)) if len(subset) == 1 else None
            correct = 0
            for i in clients:
                for b, (lo, hi) in enumerate(batch_ranges[i]):
                    sequence = assign_decryptors(
                        players, num_layers, owner, {i}, level, assignment_offset
                    )
                    assignment_offset += 1
                    correct += _hesv_eval_batch(
                        ctx, round_router, keys, arch, grid_bits, plan_for, agg,
                        data_cts[(i, b)], label_cts[(i, b)], hi - lo, sequence, actors,
                    )
            utilities[subset] = correct / total
        return _round_report(record, utilities), meter, actors

    results = _run_rounds(eval_round, rounds, workers)
    return _finish_report("hesv", clients, total, results, setup_meter, weights, started)


def _hesv_eval_batch(ctx, router, keys, arch, grid_bits, plan_for, agg_cts,
                     first_sides, label_ct_true, m_b, sequence, decrypt_actors) -> int:
    num_layers = len(arch)
    sides = first_sides
    label_ct = None
    for l in range(num_layers):
        plan = plan_for(l, m_b)
        bands = squaring_matmul(agg_cts[l], sides, plan, ctx)
        decryptor = client_name(sequence[l + 1])
        router.send(SERVER_P, decryptor, bands)
        decrypt_actors.append(decryptor)
        yhat = squaring_decrypt(bands, plan, ctx, keys.private, actor=decryptor)
        if l < num_layers - 1:
            act = _activation(arch, l, grid_bits)(yhat.data)
            sides = squaring_prepare_batch(
                with_ones_row(act), plan_for(l + 1, m_b), ctx, keys.public, encrypt=True
            )
            router.send(decryptor, SERVER_P, [ct for block in sides for ct in block])
        else:
            labels = argmax_columns(yhat)
            label_ct = ctx.encrypt_slots(labels.labels.astype(float), keys.public)
            router.send(decryptor, SERVER_P, label_ct)
    # difference of predicted and true labels, counted by the last assignee
    neg = ctx.he_mult(label_ct, -1.0)
    diff = ctx.he_add(neg, label_ct_true)
    counter_client = client_name(sequence[num_layers + 1])
    router.send(SERVER_P, counter_client, diff)
    decrypt_actors.append(counter_client)
    plain = ctx.decrypt_matrix(diff, (1, m_b), keys.private, actor=counter_client)
    cnt = int(np.sum(np.abs(plain.data[0]) < TOLERANCE))
    router.send(counter_client, SERVER_P, cnt)
    return cnt


# -- two-server data sharing ---------------------------------------------------


@dataclass
class _SharedData:
    x_prime: np.ndarray  # (d+1) x M field elements at server P
    x_dprime: np.ndarray
    y_prime: np.ndarray  # M field elements
    y_dprime: np.ndarray
    ids_by_pos: tuple[int, ...]
    owner_by_pos: tuple[int, ...]
    pos_of_id: dict

    @property
    def total(self) -> int:
        return len(self.ids_by_pos)


def _share_test_data(test_sets, field: FieldParams, router: Router, rng) -> _SharedData:
    """Every client splits (features; 1) and labels; halves go to P and A."""
    xp_parts, xa_parts, yp_parts, ya_parts = [], [], [], []
    ids, owners = [], []
    for i, ds in enumerate(test_sets):
        x = encode_matrix(with_ones_row(ds.features), field)
        pair = split_matrix(x, field, rng)
        y_pair = split_matrix(_encode_label_row(ds.labels, field), field, rng)
        router.send(client_name(i), SERVER_P, pair.s_prime)
        router.send(client_name(i), SERVER_A, pair.s_dprime)
        router.send(client_name(i), SERVER_P, y_pair.s_prime)
        router.send(client_name(i), SERVER_A, y_pair.s_dprime)
        xp_parts.append(pair.s_prime)
        xa_parts.append(pair.s_dprime)
        yp_parts.append(y_pair.s_prime[0])
        ya_parts.append(y_pair.s_dprime[0])
        ids.extend(int(s) for s in ds.ids)
        owners.extend([i] * ds.size)
    return _SharedData(
        x_prime=np.concatenate(xp_parts, axis=1),
        x_dprime=np.concatenate(xa_parts, axis=1),
        y_prime=np.concatenate(yp_parts),
        y_dprime=np.concatenate(ya_parts),
        ids_by_pos=tuple(ids),
        owner_by_pos=tuple(owners),
        pos_of_id={sid: pos for pos, sid in enumerate(ids)},
    )


def _decode_signed_block(raw, field: FieldParams, scale_bits: int, rows: int, cols: int) -> Matrix:
    """Field elements back to signed reals, guarding against wraparound."""
    p = field.prime
    half = p // 2
    guard = p // 4
    scale = float(1 << scale_bits)
    out = np.empty(rows * cols)
    for idx in range(rows * cols):
        e = int(raw[idx]) % p
        signed = e - p if e > half else e
        if abs(signed) > guard:
            raise ProtocolError(
                "fixed-point overflow: intermediate value too large for the field"
            )
        out[idx] = signed / scale
    return Matrix(out.reshape(rows, cols))


def _pack_int_ct(view: np.ndarray, slot_count: int, key_id: str) -> CipherVector:
    slots = np.zeros(slot_count, dtype=object)
    slots[:] = 0
    flat = view.reshape(-1)
    slots[: flat.size] = flat
    return CipherVector(slots, key_id)


def _split_and_distribute(router, field, owner_name, matrix_enc, rng):
    pair = split_matrix(matrix_enc, field, rng)
    router.send(owner_name, SERVER_P, pair.s_prime)
    router.send(owner_name, SERVER_A, pair.s_dprime)
    return pair


def _encode_label_row(labels: LabelVector | np.ndarray, field: FieldParams) -> np.ndarray:
    arr = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    out = np.empty((1, arr.size), dtype=object)
    for k, v in enumerate(arr):
        out[0, k] = encode(float(v), field)
    return out


def _shared_label_check(router, field, y_sh: SharePair, shared: _SharedData, cols,
                        batch_ids) -> set:
    """Servers compare predicted-label shares with truth shares; P learns ids."""
    p = field.prime
    tilde_a = (y_sh.s_dprime[0] - shared.y_dprime[cols]) % p
    router.send(SERVER_A, SERVER_P, tilde_a)
    diff = (y_sh.s_prime[0] - shared.y_prime[cols] + tilde_a) % p
    correct = set()
    half, scale = p // 2, float(1 << field.frac_bits)
    for k in range(len(batch_ids)):
        e = int(diff[k]) % p
        signed = e - p if e > half else e
        if abs(signed / scale) < TOLERANCE:
            correct.add(batch_ids[k])
    return correct


# -- SecSV ----------------------------------------------------------------------


def run_secsv(
    rounds: list[RoundModels],
    test_sets: list[ClientDataset],
    he_params: HEParams | None = None,
    field_params: FieldParams | None = None,
    skip: bool = False,
    cost_weights: CostWeights | None = None,
    level: str = "basic",
    seed: int = 0,
    workers: int = 1,
) -> ContributionReport:
    """Two-server hybrid protocol: encrypted models, secret-shared data.

    Every layer multiplication is ciphertext-plaintext via the reducing
    kernel; batches pool samples across clients.  With ``skip`` on, the
    sample-skip accelerator prunes aggregate evaluations.
    """
    started = time.perf_counter()
    arch = _common_architecture(rounds)
    he_params = he_params or HEParams()
    field = field_params or FieldParams()
    weights = cost_weights or CostWeights()
    n = len(test_sets)
    clients = list(range(n))
    num_layers = len(arch)
    grid_bits = rounds[0].global_model.act_grid_bits
    if grid_bits is not None and grid_bits > field.frac_bits:
        raise ProtocolError(
            f"activation grid of {grid_bits} bits cannot be encoded exactly "
            f"with frac_bits={field.frac_bits}"
        )

    setup_meter = CostMeter()
    router = _new_router(setup_meter, he_params, field, clients, two_servers=True)
    leader = int(np.random.default_rng(seed).integers(n))
    keys = generate_keypair(f"secsv-{seed}")
    for i in clients:
        if i != leader:
            router.send(client_name(leader), client_name(i), [keys.public, keys.private])
    router.send(client_name(leader), SERVER_P, keys.public)
    router.send(client_name(leader), SERVER_A, keys.public)

    shared = _share_test_data(
        test_sets, field, router, _random.Random(f"secsv-{seed}-data")
    )
    total = shared.total
    all_ids = list(shared.ids_by_pos)

    slot_count = he_params.slot_count
    m_cap = min(slot_count // spec.out_size for spec in arch)
    m_cap = max(1, min(m_cap, total))
    plans = [
        plan_reducing(spec.out_size, spec.in_size + 1, m_cap, slot_count)
        for spec in arch
    ]
    f_bits = field.frac_bits

    def eval_round(record: RoundModels):
        meter = CostMeter()
        ctx = HEContext(replace(he_params, seed=_round_seed(seed, record.round_index)), meter)
        round_router = _new_router(meter, he_params, field, clients, two_servers=True)
        share_rng = _random.Random(f"secsv-{seed}-round-{record.round_index}")
        actors: list[str] = []
        players = sorted(record.selected)
        counter = {"assign": 0}

        model_enc: dict = {}

        def upload_model(owner_name, model, store_key):
            enc_layers = []
            for l in range(num_layers):
                enc = encode_matrix(model.params[l], field)
                cts = reducing_prepare_model(enc, plans[l], ctx, keys.public, width=m_cap)
                round_router.send(owner_name, SERVER_P, cts)
                round_router.send(owner_name, SERVER_A, cts)
                enc_layers.append(enc)
            model_enc[store_key] = enc_layers

        for i in players:
            upload_model(client_name(i), record.local_models[i], i)
        upload_model(client_name(leader), record.global_model, "global")

        agg_cache: dict = {}

        def aggregated_cts(subset):
            """Per-layer transformed ciphertexts of the subset aggregate.

            Both servers fold their model copies: |S| scalar multiplies
            plus |S|-1 additions per ciphertext, metered per server; the
            slot values are computed once on the simulation side.
            """
            subset = frozenset(subset)
            if subset in agg_cache:
                return agg_cache[subset]
            if not subset:
                # the incoming global model, brought to the same
                # weight-times-parameter scale as every aggregate
                members_enc = [(encode(1.0, field), model_enc["global"])]
            else:
                w = record.weights_for(subset)
                members_enc = [
                    (encode(w[i], field), model_enc[i]) for i in sorted(subset)
                ]
            out = []
            for l in range(num_layers):
                agg = sum(w_enc * enc[l] for w_enc, enc in members_enc)
                n_cts = plans[l].d_in
                meter.hmult_c2p += 2 * len(members_enc) * n_cts
                meter.hadd += 2 * (len(members_enc) - 1) * n_cts
                out.append([
                    _pack_int_ct(view, slot_count, keys.public.key_id)
                    for view in _reducing_model_views(agg, m_cap)
                ])
            agg_cache[subset] = out
            return out

        def secure_eval(subset, ids_tuple):
            subset = frozenset(subset)
            agg = aggregated_cts(subset)
            owner = next(iter(subset)) if len(subset) == 1 else None
            positions = [shared.pos_of_id[s] for s in ids_tuple]
            batches = _pooled_batches(
                shared.owner_by_pos, shared.ids_by_pos, positions, m_cap, n
            )
            correct: set = set()
            for batch in batches:
                cols = np.array(batch.columns)
                m_b = len(cols)
                sequence = assign_decryptors(
                    players, num_layers, owner, batch.owners, level, counter["assign"]
                )
                counter["assign"] += 1
                xp = shared.x_prime[:, cols]
                xa = shared.x_dprime[:, cols]
                y_sh = None
                for l in range(num_layers):
                    plan = plans[l]
                    ct_p = reducing_matmul(
                        agg[l], reducing_prepare_batch(xp, plan, ctx, width=m_cap), plan, ctx
                    )
                    ct_a = reducing_matmul(
                        agg[l], reducing_prepare_batch(xa, plan, ctx, width=m_cap), plan, ctx
                    )
                    round_router.send(SERVER_A, SERVER_P, ct_a)
                    ct = ctx.he_add(ct_p, ct_a)
                    decryptor = client_name(sequence[l + 1])
                    round_router.send(SERVER_P, decryptor, ct)
                    actors.append(decryptor)
                    raw = ctx.decrypt_int_slots(
                        ct, plan.d_out * m_cap, keys.private, actor=decryptor
                    )
                    # aggregate model at 2f (weight times parameter), share at f
                    yhat = _decode_signed_block(raw, field, 3 * f_bits, plan.d_out, m_cap)
                    yhat = Matrix(yhat.data[:, :m_b])
                    if l < num_layers - 1:
                        act = _activation(arch, l, grid_bits)(yhat.data)
                        x_next = encode_matrix(with_ones_row(act), field)
                        pair = _split_and_distribute(round_router, field, decryptor, x_next, share_rng)
                        xp, xa = pair.s_prime, pair.s_dprime
                    else:
                        labels = argmax_columns(yhat)
                        y_sh = _split_and_distribute(
                            round_router, field, decryptor,
                            _encode_label_row(labels, field), share_rng,
                        )
                correct |= _shared_label_check(
                    round_router, field, y_sh, shared, cols, batch.ids
                )
            return correct

        if skip:
            result = sample_skip_round(record.round_index, players, all_ids, secure_eval)
            utilities = dict(result.utilities)
        else:
            result = None
            utilities = {}
            for subset in subsets_ascending(players):
                if subset:
                    utilities[subset] = len(secure_eval(subset, all_ids)) / total
        utilities[frozenset()] = len(secure_eval(frozenset(), all_ids)) / total
        return _round_report(record, utilities, result), meter, actors

    results = _run_rounds(eval_round, rounds, workers)
    return _finish_report(
        "secsv+skip" if skip else "secsv", clients, total, results,
        setup_meter, weights, started,
    )


# -- SecretSV ---------------------------------------------------------------------


def run_secretsv(
    rounds: list[RoundModels],
    test_sets: list[ClientDataset],
    field_params: FieldParams | None = None,
    cost_weights: CostWeights | None = None,
    level: str = "basic",
    seed: int = 0,
    batch_capacity: int = 512,
    triple_budget: int | None = None,
    workers: int = 1,
) -> ContributionReport:
    """Two-server baseline: models and data both additively shared.

    Layers are Beaver-triple multiplications between shared matrices;
    dealer traffic lands in the meter under the ``dealer`` sender.  Each
    layer applies a fixed-point truncation, so errors accumulate with
    depth.
    """
    started = time.perf_counter()
    arch = _common_architecture(rounds)
    field = field_params or FieldParams()
    weights = cost_weights or CostWeights()
    n = len(test_sets)
    clients = list(range(n))
    num_layers = len(arch)
    grid_bits = rounds[0].global_model.act_grid_bits

    setup_meter = CostMeter()
    router = _new_router(setup_meter, HEParams(), field, clients,
                         two_servers=True, with_dealer=True)
    leader = int(np.random.default_rng(seed).integers(n))
    shared = _share_test_data(
        test_sets, field, router, _random.Random(f"secretsv-{seed}-data")
    )
    total = shared.total
    all_ids = list(shared.ids_by_pos)
    m_cap = min(batch_capacity, total)
    f_bits = field.frac_bits
    p = field.prime
    per_round_budget = None if triple_budget is None else triple_budget // len(rounds)

    def eval_round(record: RoundModels):
        meter = CostMeter()
        round_router = _new_router(meter, HEParams(), field, clients,
                                   two_servers=True, with_dealer=True)
        share_rng = _random.Random(f"secretsv-{seed}-round-{record.round_index}")
        supply = TripleSupply(
            replace(field, seed=_round_seed(field.seed ^ seed, record.round_index)),
            budget=per_round_budget,
            on_bytes=lambda receiver, nbytes: meter.record_bytes("dealer", receiver, nbytes),
        )
        players = sorted(record.selected)
        model_shares: dict = {}

        def upload_shares(owner_name, model, store_key):
            layer_pairs = []
            for l in range(num_layers):
                enc = encode_matrix(model.params[l], field)
                layer_pairs.append(
                    _split_and_distribute(round_router, field, owner_name, enc, share_rng)
                )
            model_shares[store_key] = layer_pairs

        for i in players:
            upload_shares(client_name(i), record.local_models[i], i)
        upload_shares(client_name(leader), record.global_model, "global")

        def aggregated_shares(subset):
            subset = frozenset(subset)
            if not subset:
                return model_shares["global"]
            members = sorted(subset)
            w = record.weights_for(subset)
            if len(members) == 1 and w[members[0]] == 1.0:
                return model_shares[members[0]]
            w_enc = {i: encode(w[i], field) for i in members}
            out = []
            for l in range(num_layers):
                zp = sum(w_enc[i] * model_shares[i][l].s_prime for i in members) % p
                za = sum(w_enc[i] * model_shares[i][l].s_dprime for i in members) % p
                out.append(_truncate_shares(SharePair(zp, za), field))
            return out

        def secure_eval(subset, ids_tuple):
            subset = frozenset(subset)
            theta = aggregated_shares(subset)
            owner = next(iter(subset)) if len(subset) == 1 else None
            positions = [shared.pos_of_id[s] for s in ids_tuple]
            batches = _pooled_batches(
                shared.owner_by_pos, shared.ids_by_pos, positions, m_cap, n
            )
            correct: set = set()
            for bi, batch in enumerate(batches):
                cols = np.array(batch.columns)
                m_b = len(cols)
                sequence = assign_decryptors(
                    players, num_layers, owner, batch.owners, level, bi
                )
                x_pair = SharePair(shared.x_prime[:, cols], shared.x_dprime[:, cols])
                y_sh = None
                for l in range(num_layers):
                    out = share_matmul(theta[l], x_pair, supply, field, meter=meter)
                    receiver = client_name(sequence[l + 1])
                    round_router.send(SERVER_P, receiver, out.s_prime)
                    round_router.send(SERVER_A, receiver, out.s_dprime)
                    recon = (out.s_prime + out.s_dprime) % p
                    yhat = _decode_signed_block(
                        recon.reshape(-1), field, f_bits, arch[l].out_size, m_b
                    )
                    if l < num_layers - 1:
                        act = _activation(arch, l, grid_bits)(yhat.data)
                        x_next = encode_matrix(with_ones_row(act), field)
                        x_pair = _split_and_distribute(round_router, field, receiver, x_next, share_rng)
                    else:
                        labels = argmax_columns(yhat)
                        y_sh = _split_and_distribute(
                            round_router, field, receiver,
                            _encode_label_row(labels, field), share_rng,
                        )
                correct |= _shared_label_check(
                    round_router, field, y_sh, shared, cols, batch.ids
                )
            return correct

        utilities = {}
        for subset in subsets_ascending(players):
            utilities[subset] = len(secure_eval(subset, all_ids)) / total
        return _round_report(record, utilities), meter, []

    results = _run_rounds(eval_round, rounds, workers)
    return _finish_report("secretsv", clients, total, results, setup_meter, weights, started)

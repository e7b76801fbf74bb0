"""Linear-regression workflows over additive shares.

Two deployment stories share the same arithmetic core:

* target-independent (TI): m source parties jointly fit one model on the
  union of their rows; coefficient fragments stay distributed and a client
  later queries predictions by secret-sharing its input row.
* target-calibrated (TC): each source pairs up with the target for an
  independent two-party fit on its rows stacked with the target's
  calibration rows. The stacked matrices are never materialized; the
  vertical stack enters only through the additivity of local Gram
  fragments. Predictions average the per-source models, with source-side
  masking so the target never sees an individual model's output.

Every workflow runs the parties on threads over an in-process hub; the
process-per-role launcher in the harness reuses the same party programs.
"""

from __future__ import annotations

import hashlib
import io
import json
import random
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from mpclr.field import (
    FieldParams,
    FixedPointCodec,
    int_from_bytes,
    int_to_bytes,
    make_params,
)
from mpclr.protocols import DEFAULT_INVERT_ITERATIONS, PartyEngine
from mpclr.randomness import (
    DEFAULT_KAPPA,
    CorrelatedBundle,
    generate,
    plan_inference,
    plan_training,
)
from mpclr.sharing import local_gram, share
from mpclr.transport import (
    CLIENT_ID,
    DEFAULT_TIMEOUT,
    Kind,
    LoopbackHub,
    Transcript,
    decode_matrices,
    encode_matrices,
    instance_id,
)

MODEL_MAGIC = b"MDL1"


def derived_rng(seed, *tags) -> random.Random:
    """Deterministic child generator for a labeled purpose, or a system
    generator when no seed is given."""
    if seed is None:
        return random.SystemRandom()
    text = "/".join(str(part) for part in (seed, *tags))
    digest = hashlib.sha256(text.encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


@dataclass(frozen=True)
class WorkflowConfig:
    """Knobs shared by all four workflows."""

    params: FieldParams = make_params()
    kappa: int = DEFAULT_KAPPA
    iterations: int = DEFAULT_INVERT_ITERATIONS
    trace_bound: float | None = None  # default: total rows * columns
    timeout: float = DEFAULT_TIMEOUT
    seed: int | None = None


@dataclass
class RunObserver:
    """Optional sink for wire-level evidence gathered during a workflow."""

    relay_log: list = field(default_factory=list)
    transcripts: dict = field(default_factory=dict)
    keep_payloads: bool = False

    def absorb(self, hub: LoopbackHub, transcripts: dict) -> None:
        self.relay_log.extend(hub.relay_log)
        self.transcripts.update(transcripts)

    def stats(self) -> dict:
        rounds = {(r["instance"], r["round"]) for r in self.relay_log}
        return {
            "messages": len(self.relay_log),
            "bytes": sum(r["bytes"] for r in self.relay_log),
            "rounds": len(rounds),
        }


def design_matrix(features, intercept: bool) -> np.ndarray:
    """Feature rows as floats, with the constant column appended last when
    an intercept is requested."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise ValueError("features must be a matrix of rows")
    if intercept:
        x = np.hstack([x, np.ones((x.shape[0], 1))])
    return x


def solve_normal_equations(features, responses) -> np.ndarray:
    """Plaintext baseline: exact least-squares coefficients.

    Takes the design matrix as given; callers append their own intercept
    column (see design_matrix). Raises numpy.linalg.LinAlgError when the
    Gram matrix is singular.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(responses, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("feature rows and responses must align")
    return np.linalg.solve(x.T @ x, x.T @ y)


@dataclass(frozen=True, eq=False)
class LocalDataset:
    """One party's rows, already fixed-point encoded.

    When the intercept flag is set the last feature column is the constant
    encode(1). Features are expected on the [-1, 1] scale; that contract is
    what makes rows * columns a valid public trace bound for the Gram
    matrix.
    """

    features: np.ndarray
    responses: np.ndarray
    intercept: bool
    params: FieldParams

    def __post_init__(self):
        if self.features.ndim != 2 or self.responses.ndim != 2:
            raise ValueError("encoded features must be n x k, responses n x 1")
        if self.features.shape[0] != self.responses.shape[0]:
            raise ValueError("row counts differ between features and responses")
        if self.features.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if self.responses.shape[1] != 1:
            raise ValueError("responses must be a single column")
        if self.intercept:
            one = FixedPointCodec(self.params).encode(1)
            if not all(v == one for v in self.features[:, -1]):
                raise ValueError("intercept flag set but last column is not constant one")

    @classmethod
    def from_plain(cls, features, responses, params: FieldParams,
                   intercept: bool = True) -> "LocalDataset":
        codec = FixedPointCodec(params)
        x = design_matrix(features, intercept)
        y = np.asarray(responses, dtype=float).reshape(-1, 1)
        if x.shape[0] != y.shape[0]:
            raise ValueError("feature rows and responses must align")
        return cls(codec.encode_matrix(x), codec.encode_matrix(y),
                   intercept, params)

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def columns(self) -> int:
        return self.features.shape[1]

    def plain(self) -> tuple[np.ndarray, np.ndarray]:
        """Decode back to floats (test and baseline convenience)."""
        codec = FixedPointCodec(self.params)
        return (codec.decode_matrix(self.features),
                codec.decode_matrix(self.responses).reshape(-1))


@dataclass(eq=False)
class ModelShareTI:
    """Coefficient fragments distributed over all m source parties."""

    fragments: dict[int, np.ndarray]
    intercept: bool
    params: FieldParams

    @property
    def group(self) -> tuple[int, ...]:
        return tuple(sorted(self.fragments))

    @property
    def columns(self) -> int:
        return next(iter(self.fragments.values())).shape[0]

    def coefficients(self) -> np.ndarray:
        """Reconstructed plaintext coefficients; for audits and reports
        only, since pooling fragments defeats the sharing."""
        total = sum(self.fragments[pid] for pid in self.group) % self.params.q
        return FixedPointCodec(self.params).decode_matrix(total).reshape(-1)


@dataclass(eq=False)
class TwoPartyModel:
    """One TC session's outcome: a coefficient sharing split between one
    source and the target."""

    source: int
    target: int
    source_fragment: np.ndarray
    target_fragment: np.ndarray


@dataclass(eq=False)
class ModelShareTC:
    sessions: list[TwoPartyModel]
    intercept: bool
    params: FieldParams

    @property
    def sources(self) -> tuple[int, ...]:
        return tuple(s.source for s in self.sessions)

    @property
    def target(self) -> int:
        return self.sessions[0].target

    @property
    def columns(self) -> int:
        return self.sessions[0].source_fragment.shape[0]

    def coefficients(self) -> list[np.ndarray]:
        codec = FixedPointCodec(self.params)
        out = []
        for s in self.sessions:
            total = (s.source_fragment + s.target_fragment) % self.params.q
            out.append(codec.decode_matrix(total).reshape(-1))
        return out


@dataclass(frozen=True)
class MaskedPrediction:
    """A source's prediction fragment blinded with its mask; the mask
    travels separately to the aggregator."""

    source: int
    value: int

    def unmask(self, mask: int, q: int) -> int:
        return (self.value - mask) % q


# -- per-party programs; shared by the threaded and process launchers -------

def training_party(engine: PartyEngine, dataset: LocalDataset,
                   trace_bound, iterations: int) -> np.ndarray:
    """Run one party's side of a joint fit; returns its coefficient
    fragment (columns x 1, encoded)."""
    if dataset.params != engine.params:
        raise ValueError("dataset and engine use different field parameters")
    gram_raw, moment_raw = local_gram(dataset.features, dataset.responses,
                                      engine.params)
    gram = engine.trunc(engine.wrap(gram_raw))
    moment = engine.trunc(engine.wrap(moment_raw))
    inverse = engine.invert_spd(gram, trace_bound, iterations)
    beta = engine.mul_trunc(inverse, moment)
    return beta.entries


def inference_party(engine: PartyEngine, fragment: np.ndarray, rows: int,
                    client: int = CLIENT_ID) -> None:
    """Answer `rows` prediction queries from a client holding no shares."""
    beta_row = engine.wrap(fragment.reshape(1, -1))
    for j in range(rows):
        query = instance_id(f"{engine.scope}query/{j:06d}")
        env = engine.channel.recv_one(query, 0, client)
        (x_entries,) = decode_matrices(env.payload, engine.params)
        predicted = engine.mul_trunc(beta_row, engine.wrap(x_entries))
        engine.channel.send(
            instance_id(f"{engine.scope}result/{j:06d}"), 0, client,
            Kind.PREDICTION,
            encode_matrices([predicted.entries], engine.params))


def inference_client(channel, group, params: FieldParams,
                     queries: np.ndarray, rng, scope: str = "") -> np.ndarray:
    """Share each encoded query row to the group and decode the summed
    prediction fragments."""
    codec = FixedPointCodec(params)
    group = tuple(sorted(group))
    out = np.empty(len(queries), dtype=float)
    for j, row in enumerate(queries):
        fragments = share(row.reshape(-1, 1), group, params, rng)
        payloads = {
            f.owner: encode_matrices([f.entries], params) for f in fragments
        }
        query = instance_id(f"{scope}query/{j:06d}")
        for pid in group:
            channel.send(query, 0, pid, Kind.INPUT_SHARE, payloads[pid])
        result = instance_id(f"{scope}result/{j:06d}")
        total = 0
        for env in channel.recv_round(result, 0, group).values():
            (frag,) = decode_matrices(env.payload, params)
            total += int(frag[0, 0])
        out[j] = codec.decode(total % params.q)
    return out


def tc_source_serve(engine: PartyEngine, mask_channel, fragment: np.ndarray,
                    rows: int, sources, aggregator: int, mask_rng) -> None:
    """Source side of TC inference.

    Per row: receive the target's fresh input sharing, run the pairwise
    product, then hand the target a blinded fragment while the mask goes to
    the aggregator. The aggregator additionally totals all masks per row
    and forwards the sum, which is the only way the target can unblind the
    ensemble total (never an individual prediction).
    """
    params = engine.params
    q = params.q
    scope = engine.scope
    target_id = engine.peers[0]
    beta_row = engine.wrap(fragment.reshape(1, -1))

    def single(value: int) -> bytes:
        return encode_matrices([np.array([[value]], dtype=object)], params)

    for j in range(rows):
        env = engine.channel.recv_one(
            instance_id(f"{scope}query/{j:06d}"), 0, target_id)
        (x_entries,) = decode_matrices(env.payload, params)
        predicted = engine.mul_trunc(beta_row, engine.wrap(x_entries))
        mask = mask_rng.randrange(q)
        blinded = MaskedPrediction(
            engine.party_id, (int(predicted.entries[0, 0]) + mask) % q)
        mask_channel.send(instance_id(f"{scope}masked/{j:06d}"), 0, target_id,
                          Kind.MASKED_PREDICTION, single(blinded.value))
        mask_channel.send(instance_id(f"{scope}mask/{j:06d}"), 0, aggregator,
                          Kind.MASK, single(mask))
    if engine.party_id == aggregator:
        for j in range(rows):
            total = 0
            for s in sorted(sources):
                env = mask_channel.recv_one(
                    instance_id(f"s{s}/mask/{j:06d}"), 0, s)
                (value,) = decode_matrices(env.payload, params)
                total = (total + int(value[0, 0])) % q
            mask_channel.send(instance_id(f"masktotal/{j:06d}"), 0, target_id,
                              Kind.MASK_TOTAL, single(total))


def tc_target_session_serve(engine: PartyEngine, fragment: np.ndarray,
                            queries: np.ndarray, share_rng) -> list[int]:
    """Target side of one TC inference session: share each query row fresh
    with this source, run the pairwise product, keep own fragments."""
    params = engine.params
    scope = engine.scope
    source = engine.peers[0]
    beta_row = engine.wrap(fragment.reshape(1, -1))
    own = []
    for j in range(len(queries)):
        fragments = share(queries[j].reshape(-1, 1), engine.group, params,
                          share_rng)
        by_owner = {f.owner: f for f in fragments}
        engine.channel.send(
            instance_id(f"{scope}query/{j:06d}"), 0, source, Kind.INPUT_SHARE,
            encode_matrices([by_owner[source].entries], params))
        predicted = engine.mul_trunc(
            beta_row, engine.wrap(by_owner[engine.party_id].entries))
        own.append(int(predicted.entries[0, 0]))
    return own


def tc_target_combine(mask_channel, sources, aggregator: int,
                      own_fragments: dict, rows: int,
                      params: FieldParams) -> np.ndarray:
    """Unblind and average: sum of masked fragments, minus the aggregated
    mask total, plus the target's own fragments, divided by the source
    count."""
    q = params.q
    codec = FixedPointCodec(params)
    out = np.empty(rows, dtype=float)
    for j in range(rows):
        total = 0
        for i in sorted(sources):
            env = mask_channel.recv_one(
                instance_id(f"s{i}/masked/{j:06d}"), 0, i)
            (value,) = decode_matrices(env.payload, params)
            total = (total + int(value[0, 0])) % q
        env = mask_channel.recv_one(
            instance_id(f"masktotal/{j:06d}"), 0, aggregator)
        (mask_total,) = decode_matrices(env.payload, params)
        total = (total - int(mask_total[0, 0])) % q
        for i in sources:
            total = (total + own_fragments[i][j]) % q
        out[j] = codec.decode(total) / len(sources)
    return out


def _run_parallel(jobs: dict) -> dict:
    """Run callables on threads; re-raise the first failure by key order."""
    results: dict = {}
    errors: dict = {}

    def runner(key, fn):
        try:
            results[key] = fn()
        except BaseException as exc:  # noqa: BLE001 - surfaced to caller
            errors[key] = exc

    threads = [threading.Thread(target=runner, args=item, daemon=True)
               for item in jobs.items()]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for key in jobs:
        if key in errors:
            raise errors[key]
    return results


def _check_alignment(datasets) -> tuple[int, bool, FieldParams]:
    first = datasets[0]
    for d in datasets[1:]:
        if d.columns != first.columns:
            raise ValueError("feature counts differ between parties")
        if d.intercept != first.intercept:
            raise ValueError("intercept flags differ between parties")
        if d.params != first.params:
            raise ValueError("field parameters differ between parties")
    return first.columns, first.intercept, first.params


def _query_matrix(model_columns: int, intercept: bool, client_input,
                  params: FieldParams) -> tuple[np.ndarray, bool]:
    """Encode raw query rows, appending the constant column when the model
    has an intercept. Returns (encoded rows, was a single row)."""
    x = np.asarray(client_input, dtype=float)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    encoded = FixedPointCodec(params).encode_matrix(design_matrix(x, intercept))
    if encoded.shape[1] != model_columns:
        raise ValueError(
            f"query has {encoded.shape[1]} columns, model expects {model_columns}")
    return encoded, single


# -- target-independent workflows --------------------------------------------


def train_ti(parties, config: WorkflowConfig | None = None,
             observer: RunObserver | None = None) -> ModelShareTI:
    """Jointly fit one model over every party's rows; fragments of the
    coefficients end up distributed over the group."""
    config = config or WorkflowConfig()
    datasets = list(parties)
    if not datasets:
        raise ValueError("at least one party required")
    k, intercept, params = _check_alignment(datasets)
    if params != config.params:
        raise ValueError("datasets disagree with configured field parameters")
    group = tuple(range(1, len(datasets) + 1))
    total_rows = sum(d.rows for d in datasets)
    trace_bound = config.trace_bound or total_rows * k
    session = bytes(derived_rng(config.seed, "ti", "session").randbytes(16))
    bundles = generate(plan_training(k, config.iterations), session, group,
                       params, kappa=config.kappa,
                       rng=derived_rng(config.seed, "ti", "material"))
    hub = LoopbackHub(group)
    if observer is not None:
        hub.keep_payloads = observer.keep_payloads
    transcripts = {pid: Transcript() for pid in group}

    def party_job(pid: int, bundle: CorrelatedBundle, dataset: LocalDataset):
        def run():
            channel = hub.connect(pid, session, timeout=config.timeout,
                                  transcript=transcripts[pid])
            engine = PartyEngine(channel, pid, group, bundle)
            return training_party(engine, dataset, trace_bound,
                                  config.iterations)
        return run

    jobs = {
        pid: party_job(pid, bundle, dataset)
        for pid, bundle, dataset in zip(group, bundles, datasets)
    }
    fragments = _run_parallel(jobs)
    if observer is not None:
        observer.absorb(hub, transcripts)
    return ModelShareTI(fragments, intercept, params)


def infer_ti(model: ModelShareTI, client_input,
             config: WorkflowConfig | None = None,
             observer: RunObserver | None = None):
    """Predict for raw query rows against a TI model. The client shares
    each row to the group; one initializer setup covers all rows."""
    config = config or WorkflowConfig()
    if model.params != config.params:
        raise ValueError("model disagrees with configured field parameters")
    queries, single = _query_matrix(model.columns, model.intercept,
                                    client_input, model.params)
    group = model.group
    rows = queries.shape[0]
    session = bytes(derived_rng(config.seed, "infer", "session").randbytes(16))
    bundles = generate(plan_inference(model.columns, rows), session, group,
                       model.params, kappa=config.kappa,
                       rng=derived_rng(config.seed, "infer", "material"))
    hub = LoopbackHub(group)
    if observer is not None:
        hub.keep_payloads = observer.keep_payloads
    transcripts = {pid: Transcript() for pid in group}
    transcripts[CLIENT_ID] = Transcript()

    def party_job(pid: int, bundle: CorrelatedBundle):
        def run():
            channel = hub.connect(pid, session, timeout=config.timeout,
                                  transcript=transcripts[pid])
            engine = PartyEngine(channel, pid, group, bundle)
            inference_party(engine, model.fragments[pid], rows)
        return run

    def client_job():
        channel = hub.connect(CLIENT_ID, session, timeout=config.timeout,
                              transcript=transcripts[CLIENT_ID])
        return inference_client(channel, group, model.params, queries,
                                derived_rng(config.seed, "infer", "client"))

    jobs: dict = {pid: party_job(pid, b) for pid, b in zip(group, bundles)}
    jobs["client"] = client_job
    results = _run_parallel(jobs)
    if observer is not None:
        observer.absorb(hub, transcripts)
    predictions = results["client"]
    return float(predictions[0]) if single else predictions


# -- target-calibrated workflows ---------------------------------------------


def train_tc(sources, target_calibration: LocalDataset,
             config: WorkflowConfig | None = None,
             observer: RunObserver | None = None) -> ModelShareTC:
    """Fit one two-party model per source: its rows stacked (by share
    additivity, never materialized) with the target's calibration rows."""
    config = config or WorkflowConfig()
    datasets = list(sources)
    if not datasets:
        raise ValueError("at least one source required")
    k, intercept, params = _check_alignment(datasets + [target_calibration])
    if params != config.params:
        raise ValueError("datasets disagree with configured field parameters")
    target_id = len(datasets) + 1
    plan = plan_training(k, config.iterations)

    sessions = []
    for i, source_data in enumerate(datasets, start=1):
        pair = (i, target_id)
        session = bytes(derived_rng(config.seed, "tc", i, "session").randbytes(16))
        bundles = generate(plan, session, pair, params, kappa=config.kappa,
                           rng=derived_rng(config.seed, "tc", i, "material"))
        hub = LoopbackHub(pair)
        if observer is not None:
            hub.keep_payloads = observer.keep_payloads
        trace_bound = config.trace_bound or (source_data.rows +
                                             target_calibration.rows) * k
        sessions.append((i, pair, session, bundles, hub, trace_bound,
                         source_data))

    transcripts: dict = {}

    def session_job(role_data, pid, pair, session, bundle, hub, trace_bound,
                    scope):
        def run():
            transcript = Transcript()
            transcripts[(scope, pid)] = transcript
            channel = hub.connect(pid, session, timeout=config.timeout,
                                  transcript=transcript)
            engine = PartyEngine(channel, pid, pair, bundle, scope=scope)
            return training_party(engine, role_data, trace_bound,
                                  config.iterations)
        return run

    jobs: dict = {}
    for i, pair, session, bundles, hub, trace_bound, source_data in sessions:
        scope = f"s{i}/"
        jobs[("source", i)] = session_job(source_data, i, pair, session,
                                          bundles[0], hub, trace_bound, scope)
        jobs[("target", i)] = session_job(target_calibration, target_id, pair,
                                          session, bundles[1], hub,
                                          trace_bound, scope)
    results = _run_parallel(jobs)
    if observer is not None:
        for i, pair, session, bundles, hub, trace_bound, _ in sessions:
            observer.absorb(hub, {})
        observer.transcripts.update(transcripts)
    models = [
        TwoPartyModel(i, target_id, results[("source", i)],
                      results[("target", i)])
        for i, *_ in sessions
    ]
    return ModelShareTC(models, intercept, params)


def infer_tc(model: ModelShareTC, client_input,
             config: WorkflowConfig | None = None,
             observer: RunObserver | None = None,
             aggregator: int | None = None):
    """Ensemble prediction against a TC model.

    The target shares each query row independently with every source, the
    pairwise sessions produce prediction fragments, sources blind theirs
    with masks routed through the aggregator (lowest-id source unless
    overridden), and the target averages the unmasked total.
    """
    config = config or WorkflowConfig()
    if model.params != config.params:
        raise ValueError("model disagrees with configured field parameters")
    params = model.params
    queries, single = _query_matrix(model.columns, model.intercept,
                                    client_input, params)
    rows = queries.shape[0]
    target_id = model.target
    sources = model.sources
    aggregator = aggregator if aggregator is not None else min(sources)
    if aggregator not in sources:
        raise ValueError(f"aggregator {aggregator} is not a source party")
    plan = plan_inference(model.columns, rows)

    # one hub per two-party session, plus one for addressed mask routing
    mask_hub = LoopbackHub((*sources, target_id))
    mask_session = bytes(derived_rng(config.seed, "tcinfer", "masks").randbytes(16))
    if observer is not None:
        mask_hub.keep_payloads = observer.keep_payloads
    session_setups = []
    for i, tc_session in zip(sources, model.sessions):
        pair = (i, target_id)
        session = bytes(derived_rng(config.seed, "tcinfer", i, "session").randbytes(16))
        bundles = generate(plan, session, pair, params, kappa=config.kappa,
                           rng=derived_rng(config.seed, "tcinfer", i, "material"))
        hub = LoopbackHub(pair)
        if observer is not None:
            hub.keep_payloads = observer.keep_payloads
        session_setups.append((i, pair, session, bundles, hub, tc_session))

    transcripts: dict = {}

    def source_job(i, pair, session, bundles, hub, tc_session):
        scope = f"s{i}/"

        def run():
            transcript = Transcript()
            transcripts[(scope, i)] = transcript
            channel = hub.connect(i, session, timeout=config.timeout,
                                  transcript=transcript)
            engine = PartyEngine(channel, i, pair, bundles[0], scope=scope)
            mask_channel = mask_hub.connect(i, mask_session,
                                            timeout=config.timeout)
            tc_source_serve(engine, mask_channel,
                            tc_session.source_fragment, rows, sources,
                            aggregator,
                            derived_rng(config.seed, "tcinfer", i,
                                        "mask-values"))
        return run

    target_fragments: dict[int, list[int]] = {}

    def target_session_job(i, pair, session, bundles, hub, tc_session):
        scope = f"s{i}/"

        def run():
            transcript = Transcript()
            transcripts[(scope, target_id)] = transcript
            channel = hub.connect(target_id, session, timeout=config.timeout,
                                  transcript=transcript)
            engine = PartyEngine(channel, target_id, pair, bundles[1],
                                 scope=scope)
            target_fragments[i] = tc_target_session_serve(
                engine, tc_session.target_fragment, queries,
                derived_rng(config.seed, "tcinfer", i, "sharing"))
        return run

    jobs: dict = {}
    for setup in session_setups:
        i = setup[0]
        jobs[("source", i)] = source_job(*setup)
        jobs[("target", i)] = target_session_job(*setup)
    _run_parallel(jobs)

    # the mask hub buffers everything, so the target can drain it afterward
    target_mask_channel = mask_hub.connect(target_id, mask_session,
                                           timeout=config.timeout)
    out = tc_target_combine(target_mask_channel, sources, aggregator,
                            target_fragments, rows, params)
    if observer is not None:
        for _, _, _, _, hub, _ in session_setups:
            observer.absorb(hub, {})
        observer.absorb(mask_hub, {})
        observer.transcripts.update(transcripts)
    return float(out[0]) if single else out


# -- persistence --------------------------------------------------------------


def save_model_fragment(path, fragment: np.ndarray, params: FieldParams,
                        metadata: dict | None = None) -> None:
    """Persist one party's coefficient fragment with its field parameters
    and caller metadata (scenario, party, group, ...). Same record style as
    initializer bundles: tagged header, fixed-width elements, digest trailer."""
    fragment = np.asarray(fragment, dtype=object).reshape(-1, 1)
    width = params.element_bytes
    header = dict(metadata or {})
    header.update({"e": params.e, "f": params.f, "q": str(params.q),
                   "rows": fragment.shape[0]})
    blob = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(MODEL_MAGIC)
    out.write(struct.pack(">I", len(blob)))
    out.write(blob)
    for v in fragment.flat:
        out.write(int_to_bytes(int(v), width))
    payload = out.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload + hashlib.sha256(payload).digest())


def load_model_fragment(path) -> tuple[np.ndarray, dict, FieldParams]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 40 or blob[:4] != MODEL_MAGIC:
        raise ValueError("not a model fragment file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ValueError("model fragment checksum mismatch")
    buf = io.BytesIO(payload[4:])
    (meta_len,) = struct.unpack(">I", buf.read(4))
    header = json.loads(buf.read(meta_len).decode())
    params = FieldParams(header["e"], header["f"], int(header["q"]))
    width = params.element_bytes
    rows = header["rows"]
    entries = np.empty((rows, 1), dtype=object)
    for r in range(rows):
        chunk = buf.read(width)
        if len(chunk) != width:
            raise ValueError("model fragment truncated")
        entries[r, 0] = int_from_bytes(chunk)
    return entries, header, params

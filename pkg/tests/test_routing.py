"""Multi-tenant routing: addresses, durable correlation, exactly-once ask
replies under load and failures, passivation races, and crash-restart
recovery of the durable state."""

import os
import random
import signal
import subprocess
import sys
import textwrap
import threading

import pytest

from ozy.lang import load_program
from ozy.routing import (
    Address,
    AddressError,
    Container,
    CorrelationStore,
    DuplicateCorrelation,
    Envelope,
    ReplyHandle,
    canonical_key,
    parse_address,
)

ADD = load_program(
    """
proc {Add A B R} R = A + B end
""",
    "add",
)

BOOM = load_program(
    """
proc {Boom R} raise boom end end
proc {Never R} skip end
""",
    "boom",
)

ORDER = load_program(
    """
{Orch.updateCSet cset(orderId:Id approved:Approved)}
Outcome = if Approved == granted then yes else no end
""",
    "order",
)


@pytest.fixture()
def container(tmp_path):
    c = Container(str(tmp_path / "data"))
    try:
        yield c
    finally:
        c.close()


def add_tenant(container, programs=None, tenant_id="acme"):
    return container.add_tenant(tenant_id, token="s3cret", programs=programs or {})


# -- addresses ----------------------------------------------------------------


def test_address_render_parse_identity():
    for addr in [Address("acme"), Address("acme", "p-1-abc"),
                 Address("A_Z-09", "x" * 64)]:
        assert parse_address(addr.render()) == addr


@pytest.mark.parametrize("bad", ["", "a b", "x" * 65, "tenant/slash", "ü"])
def test_bad_tokens_rejected(bad):
    with pytest.raises(AddressError):
        Address(bad)


@pytest.mark.parametrize("path", ["/root", "/root/tenants", "/tenants/a",
                                  "/root/tenants/a/b/c", "/root/tenants/a/processes"])
def test_malformed_paths_rejected(path):
    with pytest.raises(AddressError):
        parse_address(path)


@pytest.mark.parametrize("seed", range(50))
def test_random_valid_addresses_round_trip(seed):
    rng = random.Random(seed)
    alphabet = "ABCdef012_-"
    tenant = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 64)))
    pid = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 64)))
    addr = Address(tenant, pid if rng.random() < 0.5 else None)
    assert parse_address(addr.render()) == addr


# -- reply handles ------------------------------------------------------------


def test_reply_handle_completes_exactly_once():
    h = ReplyHandle()
    assert h.complete_value({"a": 1}) is True
    assert h.complete_failure({"b": 2}) is False
    assert h.complete_value({"c": 3}) is False
    assert h.future.result(timeout=1) == ("value", {"a": 1})


def test_reply_handle_once_under_contention():
    h = ReplyHandle()
    wins = []
    threads = [
        threading.Thread(target=lambda i=i: h.complete_value(i) and wins.append(i))
        for i in range(20)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(wins) == 1
    assert h.future.result(timeout=1) == ("value", wins[0])


# -- correlation store --------------------------------------------------------


def test_canonical_key_is_order_insensitive_for_payload():
    assert canonical_key("orderId", {"b": 1, "a": 2}) == canonical_key(
        "orderId", {"a": 2, "b": 1}
    )
    assert canonical_key("a", 1) != canonical_key("b", 1)


def test_correlations_survive_reopen(tmp_path):
    path = str(tmp_path / "corr.jsonl")
    store = CorrelationStore(path)
    store.register("acme", canonical_key("orderId", "SO-1"), "p-1-aaa")
    n1 = store.next_counter("acme")
    store.close()

    store2 = CorrelationStore(path)
    assert store2.lookup("acme", canonical_key("orderId", "SO-1")) == "p-1-aaa"
    assert store2.next_counter("acme") == n1 + 1
    store2.close()


def test_duplicate_correlation_raises(tmp_path):
    store = CorrelationStore(str(tmp_path / "c.jsonl"))
    key = canonical_key("orderId", "SO-2")
    store.register("acme", key, "p-1-aaa")
    store.register("acme", key, "p-1-aaa")  # same process: idempotent
    with pytest.raises(DuplicateCorrelation):
        store.register("acme", key, "p-2-bbb")
    # a different tenant may reuse the key
    store.register("other", key, "p-9-zzz")
    store.close()


def test_torn_tail_line_is_tolerated(tmp_path):
    path = str(tmp_path / "c.jsonl")
    store = CorrelationStore(path)
    store.register("acme", "k1", "p-1-aaa")
    store.close()
    with open(path, "a") as fh:
        fh.write('{"t":"corr","tenant":"acme","ke')  # crash mid-write
    store2 = CorrelationStore(path)
    assert store2.lookup("acme", "k1") == "p-1-aaa"
    store2.close()


# -- basic routing ------------------------------------------------------------


def test_create_process_by_program(container):
    add_tenant(container, {"add": ADD})
    kind, payload, pid = container.ask(
        Envelope(mode="ask", tenant_id="acme", program="add")
    )
    assert kind == "value"
    assert payload == {"processId": pid}
    assert pid.startswith("p-1-")


def test_ask_procedure_returns_value(container):
    add_tenant(container, {"add": ADD})
    pid = container.tell(Envelope(mode="tell", tenant_id="acme", program="add"))
    kind, payload, _ = container.ask(
        Envelope(mode="ask", tenant_id="acme", process_id=pid,
                 procedure="Add", args=[19, 23])
    )
    assert (kind, payload) == ("value", 42)


def test_ask_unknown_tenant_fails(container):
    kind, payload, _ = container.ask(
        Envelope(mode="ask", tenant_id="ghost", program="x")
    )
    assert kind == "failure"
    assert payload["$label"] == "unknownTenant"


def test_ask_unknown_procedure_fails(container):
    add_tenant(container, {"add": ADD})
    pid = container.tell(Envelope(mode="tell", tenant_id="acme", program="add"))
    kind, payload, _ = container.ask(
        Envelope(mode="ask", tenant_id="acme", process_id=pid,
                 procedure="Nope", args=[])
    )
    assert kind == "failure"
    assert payload["$label"] == "undeliverable"
    assert "Nope" in payload["reason"]


def test_raising_procedure_fails_the_ask(container):
    add_tenant(container, {"boom": BOOM})
    pid = container.tell(Envelope(mode="tell", tenant_id="acme", program="boom"))
    kind, payload, _ = container.ask(
        Envelope(mode="ask", tenant_id="acme", process_id=pid,
                 procedure="Boom", args=[])
    )
    assert kind == "failure"


def test_ask_timeout_resolves_exactly_once(container):
    add_tenant(container, {"boom": BOOM})
    pid = container.tell(Envelope(mode="tell", tenant_id="acme", program="boom"))
    env = Envelope(mode="ask", tenant_id="acme", process_id=pid,
                   procedure="Never", args=[])
    kind, payload, _ = container.ask(env, timeout_ms=100)
    assert (kind, payload) == ("failure", {"$label": "askTimeout", "ms": 100})
    # a late completion attempt is swallowed by the once-guard
    assert env.reply.complete_value("late") is False


def test_undeliverable_tell_goes_to_dead_letters(container):
    add_tenant(container, {"add": ADD})
    container.tell(Envelope(mode="tell", tenant_id="acme", process_id="p-99-nope",
                            procedure="Add", args=[1, 2]))
    letters = container.dead_letters.list("acme")
    assert len(letters) == 1
    assert "p-99-nope" in letters[0]["reason"]


# -- correlation routing and passivation --------------------------------------


def start_order(container, order_id):
    return container.tell(
        Envelope(mode="tell", tenant_id="acme", program="order",
                 correlation={"orderId": order_id})
    )


def test_correlation_tell_reaches_the_right_process(container):
    tenant = add_tenant(container, {"order": ORDER})
    pid_a = start_order(container, "SO-1")
    pid_b = start_order(container, "SO-2")
    assert pid_a != pid_b
    container.tell(
        Envelope(mode="tell", tenant_id="acme", correlation={"orderId": "SO-2"},
                 external="approved", value="granted")
    )
    host_b = tenant.resolve(pid_b)
    assert host_b.status_view()["status"] == "terminated"
    host_a = tenant.resolve(pid_a)
    assert host_a.status_view()["status"] == "partially-terminated"


def test_passivation_and_resume(container):
    tenant = add_tenant(container, {"order": ORDER})
    pid = start_order(container, "SO-3")
    assert tenant.passivate_idle(0) == 1
    assert pid not in tenant.live
    files = os.listdir(tenant.snapshot_dir)
    assert any(f.startswith(f"acme.{pid}.") for f in files)

    kind, payload, _ = container.ask(
        Envelope(mode="ask", tenant_id="acme", correlation={"orderId": "SO-3"},
                 external="approved", value="granted")
    )
    assert (kind, payload) == ("value", {"bound": "approved"})
    assert tenant.resolve(pid).status_view()["status"] == "terminated"


def test_resolve_uses_newest_snapshot(container):
    tenant = add_tenant(container, {"order": ORDER})
    pid = start_order(container, "SO-4")
    tenant.passivate_idle(0)
    first = tenant._latest_snapshot(pid)
    # resume without finishing (deliver nothing that terminates it), passivate
    host = tenant.resolve(pid)
    host.machine.reduction_count += 1  # simulate progress
    tenant.passivate_idle(0)
    newest = tenant._latest_snapshot(pid)
    assert newest != first
    counts = [int(p.rsplit(".", 2)[-2]) for p in (first, newest)]
    assert counts[1] > counts[0]


def test_terminated_process_is_not_passivated(container):
    tenant = add_tenant(container, {"order": ORDER})
    pid = start_order(container, "SO-5")
    container.tell(
        Envelope(mode="tell", tenant_id="acme", process_id=pid,
                 external="approved", value="granted")
    )
    assert tenant.resolve(pid).status_view()["status"] == "terminated"
    assert tenant.passivate_idle(0) == 0


def test_duplicate_correlation_key_is_undeliverable(container):
    add_tenant(container, {"order": ORDER})
    start_order(container, "SO-6")
    kind, payload, _ = container.ask(
        Envelope(mode="ask", tenant_id="acme", program="order",
                 correlation={"orderId": "SO-6"})
    )
    # the correlation already routes to the existing process
    assert kind == "value"


# -- exactly-once under load (1000 randomized asks) ---------------------------


def test_thousand_asks_get_exactly_one_reply_each(container):
    add_tenant(container, {"add": ADD, "boom": BOOM})
    add_pid = container.tell(Envelope(mode="tell", tenant_id="acme", program="add"))
    boom_pid = container.tell(Envelope(mode="tell", tenant_id="acme", program="boom"))
    rng = random.Random(99)
    plans = []
    for i in range(1000):
        kind = rng.choice(["ok", "ok", "ok", "raise", "unknown"])
        plans.append((i, kind))
    results = [None] * len(plans)

    def worker(chunk):
        for i, kind in chunk:
            if kind == "ok":
                a, b = i, i * 2
                env = Envelope(mode="ask", tenant_id="acme", process_id=add_pid,
                               procedure="Add", args=[a, b])
                results[i] = (container.ask(env), ("value", a + b), env)
            elif kind == "raise":
                env = Envelope(mode="ask", tenant_id="acme", process_id=boom_pid,
                               procedure="Boom", args=[])
                results[i] = (container.ask(env), ("failure", None), env)
            else:
                env = Envelope(mode="ask", tenant_id="acme", process_id=add_pid,
                               procedure="Missing", args=[])
                results[i] = (container.ask(env), ("failure", None), env)

    n_workers = 8
    chunks = [plans[w::n_workers] for w in range(n_workers)]
    threads = [threading.Thread(target=worker, args=(c,)) for c in chunks]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    for got, expected, env in results:
        kind, payload, _pid = got
        assert kind == expected[0]
        if expected[1] is not None:
            assert payload == expected[1]
        # the once-guard already consumed the single allowed completion
        assert env.reply.complete_value("again") is False


# -- passivation vs delivery races --------------------------------------------


def test_message_versus_passivation_races(container):
    tenant = add_tenant(container, {"order": ORDER})
    rng = random.Random(7)
    for trial in range(200):
        order_id = f"SO-R{trial}"
        start_order(container, order_id)
        env = Envelope(mode="ask", tenant_id="acme",
                       correlation={"orderId": order_id},
                       external="approved", value="granted")
        barrier = threading.Barrier(2)
        errors = []

        def deliverer():
            barrier.wait()
            try:
                container.ask(env, timeout_ms=5000)
            except Exception as e:  # noqa: BLE001 - any leak fails the trial
                errors.append(e)

        def passivator():
            barrier.wait()
            try:
                tenant.passivate_idle(0)
            except Exception as e:  # noqa: BLE001
                errors.append(e)

        threads = [threading.Thread(target=deliverer),
                   threading.Thread(target=passivator)]
        if rng.random() < 0.5:
            threads.reverse()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        kind, payload = env.reply.future.result(timeout=1)
        assert (kind, payload) == ("value", {"bound": "approved"})
        # regardless of interleaving the process ends terminated
        host = container.find_host
        resolved = tenant.resolve
        pid = container.correlations.lookup(
            "acme", canonical_key("orderId", order_id)
        )
        assert resolved(pid).status_view()["status"] == "terminated"


# -- crash / restart ----------------------------------------------------------


CHILD_SCRIPT = """
import os, signal, sys
sys.path.insert(0, {src!r})
from ozy.lang import load_program
from ozy.routing import Container, Envelope

ORDER = load_program('''
{{Orch.updateCSet cset(orderId:Id approved:Approved)}}
Outcome = if Approved == granted then yes else no end
''', "order")

c = Container({data!r})
t = c.add_tenant("acme", programs={{"order": ORDER}})
pid = c.tell(Envelope(mode="tell", tenant_id="acme", program="order",
                      correlation={{"orderId": "SO-KILL"}}))
t.passivate_idle(0)
print(pid, flush=True)
os.kill(os.getpid(), signal.SIGKILL)
"""


def test_kill_dash_nine_then_restart_resolves(tmp_path):
    data_dir = str(tmp_path / "data")
    src_dir = os.path.join(os.path.dirname(__file__), "..", "src")
    script = CHILD_SCRIPT.format(src=os.path.abspath(src_dir), data=data_dir)
    proc = subprocess.run([sys.executable, "-c", script],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == -signal.SIGKILL
    pid = proc.stdout.strip()
    assert pid.startswith("p-1-")

    c = Container(data_dir)
    try:
        c.add_tenant("acme", programs={"order": ORDER})
        kind, payload, routed_pid = c.ask(
            Envelope(mode="ask", tenant_id="acme",
                     correlation={"orderId": "SO-KILL"},
                     external="approved", value="granted")
        )
        assert (kind, payload) == ("value", {"bound": "approved"})
        assert routed_pid == pid
        # process-id counters continue past the crashed run
        fresh = c.tenants["acme"].new_process_id()
        assert int(fresh.split("-")[1]) > 1
    finally:
        c.close()

"""Hiding shares from a wiretapper.

A passive eavesdropper on every link sees each share pair of the plain
protocol.  Switching the transport to per-receiver Paillier encryption
leaves the consensus result untouched (shares ride through a fixed-point
codec, so the two trajectories agree to ~2^-48) while the wire carries only
ciphertexts that fail to decrypt without the right private key.

The same encrypted transport also runs as five real TCP processes; see the
README's `privsum node` example or `run_local_cluster`.

Run:  python demos/03_encrypted_transport.py
"""
import random

import numpy as np

from privsum import ExperimentConfig, decrypt, default_demo_graph, keygen, run_experiment
from privsum.errors import MalformedCiphertext
from privsum.sim import MODE_ALGORITHM1, MODE_ALGORITHM2

graph = default_demo_graph()
x0 = [10.0, 15.0, 20.0, 25.0, 30.0]


def config(mode):
    return ExperimentConfig(
        graph=graph, x0=list(x0), big_k=1, epsilon=0.01, max_rounds=100,
        stop_tol=0.0, seed=1, mode=mode, key_bits=256,
    )


plain = run_experiment(config(MODE_ALGORITHM1))
enc = run_experiment(config(MODE_ALGORITHM2))

print("plain final estimates:    ", np.round(plain.metrics.pi[-1], 9))
print("encrypted final estimates:", np.round(enc.metrics.pi[-1], 9))
worst = max(
    max(abs(a.s_share - b.s_share), abs(a.w_share - b.w_share))
    for pk, ek in zip(plain.record.delivered_log, enc.record.delivered_log)
    for a, b in zip(pk, ek)
)
print(f"worst share deviation plain vs encrypted: {worst:.2e} (codec quantization)")
print(f"mean encryption latency: {enc.mean_encrypt_seconds * 1e3:.3f} ms per share")
print()

first = enc.eavesdropper_log.messages[0][0]
print("what the wiretapper sees on one link (round 0):")
print(f"  sender {first.sender} -> receiver {first.receiver}")
print(f"  s ciphertext: {str(first.s_cipher.value)[:48]}... ({first.s_cipher.value.bit_length()} bits)")

outsider = keygen(256, random.Random(99))
try:
    decrypt(outsider, first.s_cipher)
    print("  outsider decrypted the share (should never happen)")
except MalformedCiphertext as exc:
    print(f"  outsider decryption attempt fails: {exc}")

plain_first = plain.record.delivered_log[0][0]
print(f"  the plaintext share it is hiding: {plain_first.s_share!r}")

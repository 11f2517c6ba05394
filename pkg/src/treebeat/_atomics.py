"""Atomic int64 operations on numpy arrays for nopython kernels.

Numba exposes no CPU atomics, so these intrinsics emit the LLVM
instructions directly.  All orderings are seq_cst: the call rates here are
low (scheduler handshakes, not per-trip work) and x86 makes them cheap.
`cpu_yield` resolves libc's sched_yield through the JIT linker, which keeps
the callers disk-cacheable, unlike a ctypes pointer.
"""

from __future__ import annotations

from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic


def _item_pointer(context, builder, aryty, ary_val, idx):
    ary = context.make_array(aryty)(context, builder, ary_val)
    return cgutils.get_item_pointer(context, builder, aryty, ary, [idx], wraparound=False)


@intrinsic
def atomic_add(typingctx, arr_t, idx_t, val_t):
    """Atomically add val to arr[idx]; returns the previous value."""
    sig = types.int64(arr_t, types.intp, types.int64)

    def codegen(context, builder, signature, args):
        arr, idx, val = args
        ptr = _item_pointer(context, builder, signature.args[0], arr, idx)
        return builder.atomic_rmw("add", ptr, val, "seq_cst")

    return sig, codegen


@intrinsic
def atomic_cas(typingctx, arr_t, idx_t, expect_t, new_t):
    """Compare-and-swap on arr[idx]; True if the swap happened."""
    sig = types.boolean(arr_t, types.intp, types.int64, types.int64)

    def codegen(context, builder, signature, args):
        arr, idx, expect, new = args
        ptr = _item_pointer(context, builder, signature.args[0], arr, idx)
        pair = builder.cmpxchg(ptr, expect, new, "seq_cst", "monotonic")
        return builder.extract_value(pair, 1)

    return sig, codegen


@intrinsic
def atomic_load(typingctx, arr_t, idx_t):
    sig = types.int64(arr_t, types.intp)

    def codegen(context, builder, signature, args):
        arr, idx = args
        ptr = _item_pointer(context, builder, signature.args[0], arr, idx)
        return builder.load_atomic(ptr, ordering="seq_cst", align=8)

    return sig, codegen


@intrinsic
def atomic_store(typingctx, arr_t, idx_t, val_t):
    sig = types.void(arr_t, types.intp, types.int64)

    def codegen(context, builder, signature, args):
        arr, idx, val = args
        ptr = _item_pointer(context, builder, signature.args[0], arr, idx)
        builder.store_atomic(val, ptr, ordering="seq_cst", align=8)
        return context.get_dummy_value()

    return sig, codegen


@intrinsic
def cpu_yield(typingctx):
    """Release the CPU to the OS scheduler (libc sched_yield)."""
    sig = types.int32()

    def codegen(context, builder, signature, args):
        mod = builder.module
        fn = None
        for f in mod.functions:
            if f.name == "sched_yield":
                fn = f
                break
        if fn is None:
            fnty = ir.FunctionType(ir.IntType(32), [])
            fn = ir.Function(mod, fnty, name="sched_yield")
        return builder.call(fn, [])

    return sig, codegen


@njit(nogil=True, cache=True)
def lock_acquire(ctl, slot):
    """Spin with OS-yield backoff; safe when workers outnumber cores."""
    spins = 0
    while True:
        if atomic_load(ctl, slot) == 0 and atomic_cas(ctl, slot, 0, 1):
            return
        spins += 1
        if spins >= 32:
            cpu_yield()
            spins = 0


@njit(nogil=True, cache=True)
def lock_release(ctl, slot):
    atomic_store(ctl, slot, 0)

# cython: boundscheck=False, wraparound=False, language_level=3
"""Compiled word kernels; mirrors _purekernel exactly.

Words are lists of nonzero signed integers (1-based generators).  The hot
loops (free reduction and substitution) dominate the runtime of growth
estimation and limit-length iteration, which is why they live here.
"""

BACKEND = "cython"


def reduce_word(letters):
    cdef list out = []
    cdef long x
    for x in letters:
        if out and <long> out[len(out) - 1] == -x:
            out.pop()
        else:
            out.append(x)
    return out


def concat(a, b):
    cdef list out = list(a)
    cdef long x
    for x in b:
        if out and <long> out[len(out) - 1] == -x:
            out.pop()
        else:
            out.append(x)
    return out


def invert_word(a):
    cdef list out = []
    cdef Py_ssize_t i
    cdef list la = list(a)
    for i in range(len(la) - 1, -1, -1):
        out.append(-<long> la[i])
    return out


def substitute(letters, images):
    cdef list out = []
    cdef list img
    cdef long x, y
    cdef Py_ssize_t i
    for x in letters:
        if x > 0:
            img = images[x - 1]
            for i in range(len(img)):
                y = <long> img[i]
                if out and <long> out[len(out) - 1] == -y:
                    out.pop()
                else:
                    out.append(y)
        else:
            img = images[-x - 1]
            for i in range(len(img) - 1, -1, -1):
                y = -<long> img[i]
                if out and <long> out[len(out) - 1] == -y:
                    out.pop()
                else:
                    out.append(y)
    return out


def cyclic_bounds(letters):
    cdef list w = list(letters)
    cdef Py_ssize_t i = 0, j = len(w)
    while j - i >= 2 and <long> w[i] == -<long> w[j - 1]:
        i += 1
        j -= 1
    return i, j


def count_letters(letters, rank):
    cdef list counts = [0] * rank
    cdef long x
    for x in letters:
        counts[abs(x) - 1] = <long> counts[abs(x) - 1] + 1
    return counts

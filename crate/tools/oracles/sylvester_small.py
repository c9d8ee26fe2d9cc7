"""Reference solution for sylvester::tests::frozen_small_case."""
import numpy as np

s1 = np.array([[4, 1], [1, 3.0]])
b = np.array([[2, 1], [1, 2.0]])
s2 = np.array([[1, 0.5], [0.5, 2.0]])
e = np.array([[1, 2], [3, 4.0]])
k = np.kron(s1.T, np.eye(2)) + np.kron(s2.T, b)
x = np.linalg.solve(k, e.flatten(order="F")).reshape(2, 2, order="F")
np.set_printoptions(precision=17)
print(repr(x))

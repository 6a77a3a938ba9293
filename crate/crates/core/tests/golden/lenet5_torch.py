"""PyTorch module generated by darviz from "lenet5".

Tensors are NCHW.
"""

import torch
from torch import nn


class Lenet5(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 6, kernel_size=(5, 5), stride=(1, 1), padding=(0, 0))
        self.tanh1 = nn.Tanh()
        self.pool1 = nn.AvgPool2d(kernel_size=(2, 2), stride=(2, 2), padding=(0, 0), ceil_mode=False)
        self.conv2 = nn.Conv2d(6, 16, kernel_size=(5, 5), stride=(1, 1), padding=(0, 0))
        self.tanh2 = nn.Tanh()
        self.pool2 = nn.AvgPool2d(kernel_size=(2, 2), stride=(2, 2), padding=(0, 0), ceil_mode=False)
        self.flatten = nn.Flatten()
        self.fc1 = nn.Linear(400, 120)
        self.tanh3 = nn.Tanh()
        self.fc2 = nn.Linear(120, 84)
        self.tanh4 = nn.Tanh()
        self.fc3 = nn.Linear(84, 10)
        self.prob = nn.Softmax(dim=1)

    def forward(self, input_):
        conv1 = self.conv1(input_)
        tanh1 = self.tanh1(conv1)
        pool1 = self.pool1(tanh1)
        conv2 = self.conv2(pool1)
        tanh2 = self.tanh2(conv2)
        pool2 = self.pool2(tanh2)
        flatten = self.flatten(pool2)
        fc1 = self.fc1(flatten)
        tanh3 = self.tanh3(fc1)
        fc2 = self.fc2(tanh3)
        tanh4 = self.tanh4(fc2)
        fc3 = self.fc3(tanh4)
        prob = self.prob(fc3)
        return prob


if __name__ == "__main__":
    print(Lenet5())

"""Keras model generated by darviz from "vgg16"."""

from tensorflow import keras
from tensorflow.keras import layers


def build_model():
    input_ = layers.Input(shape=(224, 224, 3), name="input_")
    conv1_1 = layers.Conv2D(64, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv1_1")(input_)
    conv1_2 = layers.Conv2D(64, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv1_2")(conv1_1)
    pool1 = layers.MaxPooling2D(pool_size=(2, 2), strides=(2, 2), padding="valid", name="pool1")(conv1_2)
    conv2_1 = layers.Conv2D(128, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv2_1")(pool1)
    conv2_2 = layers.Conv2D(128, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv2_2")(conv2_1)
    pool2 = layers.MaxPooling2D(pool_size=(2, 2), strides=(2, 2), padding="valid", name="pool2")(conv2_2)
    conv3_1 = layers.Conv2D(256, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv3_1")(pool2)
    conv3_2 = layers.Conv2D(256, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv3_2")(conv3_1)
    conv3_3 = layers.Conv2D(256, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv3_3")(conv3_2)
    pool3 = layers.MaxPooling2D(pool_size=(2, 2), strides=(2, 2), padding="valid", name="pool3")(conv3_3)
    conv4_1 = layers.Conv2D(512, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv4_1")(pool3)
    conv4_2 = layers.Conv2D(512, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv4_2")(conv4_1)
    conv4_3 = layers.Conv2D(512, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv4_3")(conv4_2)
    pool4 = layers.MaxPooling2D(pool_size=(2, 2), strides=(2, 2), padding="valid", name="pool4")(conv4_3)
    conv5_1 = layers.Conv2D(512, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv5_1")(pool4)
    conv5_2 = layers.Conv2D(512, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv5_2")(conv5_1)
    conv5_3 = layers.Conv2D(512, (3, 3), strides=(1, 1), padding="same", activation="relu", name="conv5_3")(conv5_2)
    pool5 = layers.MaxPooling2D(pool_size=(2, 2), strides=(2, 2), padding="valid", name="pool5")(conv5_3)
    flatten = layers.Flatten(name="flatten")(pool5)
    fc6 = layers.Dense(4096, activation="relu", name="fc6")(flatten)
    drop6 = layers.Dropout(0.5, name="drop6")(fc6)
    fc7 = layers.Dense(4096, activation="relu", name="fc7")(drop6)
    drop7 = layers.Dropout(0.5, name="drop7")(fc7)
    fc8 = layers.Dense(1000, name="fc8")(drop7)
    prob = layers.Softmax(axis=-1, name="prob")(fc8)
    return keras.Model(inputs=input_, outputs=prob, name="vgg16")


if __name__ == "__main__":
    build_model().summary()
